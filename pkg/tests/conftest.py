import numpy as np
import pytest
import torch


def random_pair(rng: np.random.Generator, size: int = 8):
    """A random (pred, gt) pair covering continuous, quantized and binary predictions."""
    kind = rng.integers(4)
    if kind == 0:
        gt = rng.random((size, size)) < rng.uniform(0.1, 0.6)
    else:
        gt = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(1, 3)):
            r, c = rng.integers(0, size, 2)
            h, w = rng.integers(1, size // 2 + 1, 2)
            gt[r : r + h, c : c + w] = True
    mode = rng.integers(3)
    if mode == 0:
        pred = rng.random((size, size))
    elif mode == 1:
        pred = rng.integers(0, 256, (size, size)) / 255.0
    else:
        noisy = np.where(rng.random((size, size)) < 0.2, ~gt, gt)
        pred = noisy.astype(np.float64)
    return pred, gt


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    yield


# --- acceptance-criterion bookkeeping ---------------------------------------

CRITERIA: dict[int, tuple[str, str, str]] = {}


class Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.notes = number, title, []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            status = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            status = "SKIP"
            self.notes.append(str(exc))
        else:
            status = "FAIL"
            self.notes.append(f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        line = f"criterion {self.number} {status}: {self.title}" + (f" ({'; '.join(self.notes)})" if self.notes else "")
        CRITERIA[self.number] = (status, self.title, line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n][2])
