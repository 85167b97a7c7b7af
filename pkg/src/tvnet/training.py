"""Optimisation loop, evaluation, prediction and the four-row ablation harness."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import config as config_io
from .checkpoint import load_model, read_checkpoint, save_checkpoint
from .config import TrainConfig
from .data.dataset import IMAGE_SUFFIXES, Sample, augment, load_index, load_sample, read_image
from .losses import total_loss
from .metrics import COLUMNS, MetricsReport, evaluate_pair, mean_report
from .model import TVNet, parameter_summary, resize_to

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
LOG_COLUMNS = ("iteration", "epoch", "lr", "edge", "mask_p6", "mask_p5", "mask_p4", "mask_p3", "total")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def set_deterministic(flag: bool) -> None:
    torch.use_deterministic_algorithms(flag)
    torch.backends.cudnn.benchmark = not flag


def to_tensor(images: list[np.ndarray]) -> torch.Tensor:
    x = torch.from_numpy(np.stack(images)).permute(0, 3, 1, 2).float() / 255.0
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (x - mean) / std


def batch_tensors(samples: list[Sample]):
    image = to_tensor([s.image for s in samples])
    mask = torch.from_numpy(np.stack([s.mask for s in samples])[:, None]).float()
    edge = torch.from_numpy(np.stack([s.edge for s in samples])[:, None]).float()
    return image, mask, edge


def build_optimizer(model: TVNet, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(
            model.parameters(), lr=cfg.lr, betas=(cfg.momentum, cfg.adam_beta2), weight_decay=cfg.weight_decay
        )
    return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_step <= 0:
        return cfg.lr
    return cfg.lr * cfg.lr_gamma ** (epoch // cfg.lr_step)


def epoch_order(cfg: TrainConfig, epoch: int, n: int) -> np.ndarray:
    """Shuffle for one epoch, a pure function of (seed, epoch) so resumes replay it."""
    return np.random.default_rng([cfg.seed, epoch]).permutation(n)


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class TrainResult:
    model: TVNet
    checkpoint: Path
    log_path: Path
    history: list[dict] = field(default_factory=list)
    iterations: int = 0


def _open_log(log_path: Path, keep_until: int) -> list[dict]:
    """Rows up to and including ``keep_until``; later rows belong to a run being replaced."""
    rows = []
    if keep_until > 0 and log_path.exists():
        with open(log_path, newline="") as f:
            rows = [r for r in csv.DictReader(f) if int(r["iteration"]) <= keep_until]
    with open(log_path, "w", newline="") as f:
        w = csv.DictWriter(f, LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def train(
    cfg: TrainConfig,
    samples: list[Sample],
    out_dir,
    resume: str | Path | None = None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Train on in-memory samples, checkpointing after every epoch.

    ``stop_after_epoch`` ends the run early (used to produce a mid-run
    checkpoint for resume tests); ``resume`` continues from a checkpoint.
    """
    cfg.validate()
    if not samples:
        raise ValueError("no training samples")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    set_deterministic(cfg.deterministic)
    (out / "config.txt").write_text(config_io.dump(cfg))

    torch.manual_seed(cfg.seed)
    model = TVNet(cfg.model_config())
    optimizer = build_optimizer(model, cfg)
    start_epoch, iteration = 0, 0
    if resume is not None:
        payload = read_checkpoint(resume)
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        torch.set_rng_state(payload["torch_rng"])
        start_epoch, iteration = payload["epoch"] + 1, payload["iteration"]
        log.info("resumed from %s at epoch %d, iteration %d", resume, start_epoch, iteration)

    log_path = out / "train_log.csv"
    history = [{k: float(v) for k, v in r.items()} for r in _open_log(log_path, iteration)]
    level_w = cfg.level_weight_map()
    ckpt = out / "checkpoint.pt"
    model.train()
    done = False
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = epoch_order(cfg, epoch, len(samples))
        aug_rng = np.random.default_rng([cfg.seed, epoch, 1])
        for start in range(0, len(order), cfg.batch_size):
            batch = [augment(samples[i], cfg.input_size, aug_rng, cfg.flip) for i in order[start : start + cfg.batch_size]]
            image, mask, edge = batch_tensors(batch)
            breakdown = total_loss(model(image), mask, edge, level_w, cfg.edge_weight)
            if not torch.isfinite(breakdown.total):
                raise DivergenceError(f"non-finite loss at iteration {iteration + 1}: {breakdown.as_floats()}")
            optimizer.zero_grad(set_to_none=True)
            breakdown.total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            iteration += 1
            row = {"iteration": iteration, "epoch": epoch, "lr": lr}
            losses = breakdown.as_floats()
            row.update({k: losses.get(k, 0.0) for k in LOG_COLUMNS[3:]})
            history.append(row)
            with open(log_path, "a", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(
                    [iteration, epoch, _fmt(lr)] + [_fmt(row[k]) for k in LOG_COLUMNS[3:]]
                )
            if cfg.max_iters and iteration >= cfg.max_iters:
                done = True
                break
        save_checkpoint(ckpt, model, optimizer, epoch, iteration, cfg)
        log.info("epoch %d done, iteration %d, loss %.4f", epoch, iteration, history[-1]["total"])
        if done or (stop_after_epoch is not None and epoch >= stop_after_epoch):
            break
    model.eval()
    return TrainResult(model, ckpt, log_path, history, iteration)


def load_split(root, split: str) -> list[Sample]:
    return [load_sample(r) for r in load_index(root, split).records]


def train_from_config(cfg: TrainConfig, out_dir, resume=None) -> TrainResult:
    return train(cfg, load_split(cfg.data_root, cfg.train_split), out_dir, resume=resume)


# --- inference -------------------------------------------------------------


@torch.no_grad()
def predict_probability(model: TVNet, image: np.ndarray, input_size: int) -> np.ndarray:
    """Probability map at the image's own resolution."""
    model.eval()
    h, w = image.shape[:2]
    resized = np.asarray(Image.fromarray(image).resize((input_size, input_size), Image.BILINEAR))
    prob = model(to_tensor([resized])).final_prob
    return resize_to(prob, (h, w))[0, 0].double().clamp(0, 1).numpy()


def to_uint8(prob: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(prob, 0, 1) * 255).astype(np.uint8)


def evaluate_samples(model: TVNet, samples: list[Sample], input_size: int, exclude_background=True) -> MetricsReport:
    """Metrics on 8-bit quantised predictions, as they would be read back from disk."""
    reports = []
    for s in samples:
        if exclude_background and not s.mask.any():
            continue
        pred = to_uint8(predict_probability(model, s.image, input_size)) / 255.0
        reports.append(evaluate_pair(pred, s.mask))
    return mean_report(reports)


def _input_size_of(payload: dict, default: int = 352) -> int:
    tc = payload.get("train_config") or {}
    return int(tc.get("input_size", default))


def predict(checkpoint, image_dir, out_dir, input_size: int | None = None) -> list[Path]:
    """Write one 8-bit grayscale PNG per input image, keeping the file stem."""
    model, payload = load_model(checkpoint)
    size = input_size or _input_size_of(payload)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in sorted(Path(image_dir).iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        prob = predict_probability(model, read_image(path), size)
        target = out / f"{path.stem}.png"
        Image.fromarray(to_uint8(prob), mode="L").save(target)
        written.append(target)
    log.info("wrote %d prediction maps to %s", len(written), out)
    return written


# --- ablation --------------------------------------------------------------

ABLATION_ROWS = {
    "a": ("baseline", False, False),
    "b": ("+HRF", True, False),
    "c": ("+FBA", False, True),
    "d": ("+HRF+FBA", True, True),
}


def ablation_configs(base: TrainConfig) -> dict[str, TrainConfig]:
    return {k: dataclasses.replace(base, use_hrf=h, use_fba=f) for k, (_, h, f) in ABLATION_ROWS.items()}


def check_ablation_params(counts: dict[str, dict[str, int]]) -> list[str]:
    """Problems with how the rows' parameter counts differ; empty when the toggles are clean."""
    problems = []
    shared = ("backbone", "ncd")
    for name in shared:
        if len({c[name] for c in counts.values()}) != 1:
            problems.append(f"{name} parameter count differs across rows")
    for row, (_, hrf, fba) in ABLATION_ROWS.items():
        c = counts[row]
        if (c["hrf"] > 0) != hrf or (c["edge_head"] > 0) != hrf or (c["reduce"] > 0) == hrf:
            problems.append(f"row {row}: HRF modules inconsistent with use_hrf={hrf}")
        if (c["fba"] > 0) != fba:
            problems.append(f"row {row}: FBA modules inconsistent with use_fba={fba}")
        expected = sum(c[m] for m in ("backbone", "edge_head", "hrf", "reduce", "ncd", "fba"))
        if expected != c["total"]:
            problems.append(f"row {row}: {c['total'] - expected} parameters outside the known groups")
    # toggles compose additively
    a, b, cc, d = (counts[k]["total"] for k in "abcd")
    if d - a != (b - a) + (cc - a):
        problems.append("HRF and FBA parameter deltas do not add up")
    return problems


@dataclass
class AblationResult:
    reports: dict[str, MetricsReport]
    params: dict[str, dict[str, int]]
    problems: list[str]


def format_ablation(result: AblationResult, digits: int = 3) -> str:
    head = "| row | variant | params | " + " | ".join(COLUMNS) + " |"
    lines = [head, "|" + "---|" * (3 + len(COLUMNS))]
    for k, rep in result.reports.items():
        vals = " | ".join(f"{v:.{digits}f}" for v in rep.as_row())
        lines.append(f"| {k} | {ABLATION_ROWS[k][0]} | {result.params[k]['total']:,} | {vals} |")
    return "\n".join(lines) + "\n"


def write_ablation(result: AblationResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, md_path = out / "ablation.csv", out / "ablation.md"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["row", "variant", "params", *COLUMNS])
        for k, rep in result.reports.items():
            w.writerow([k, ABLATION_ROWS[k][0], result.params[k]["total"], *(repr(v) for v in rep.as_row())])
    md_path.write_text(format_ablation(result))
    return csv_path, md_path


def ablation_suite(
    base: TrainConfig, train_samples: list[Sample], test_samples: list[Sample], out_dir
) -> AblationResult:
    """Train rows a-d with the same seed and evaluate each on ``test_samples``."""
    out = Path(out_dir)
    reports, params = {}, {}
    for row, cfg in ablation_configs(base).items():
        log.info("ablation row %s (%s)", row, ABLATION_ROWS[row][0])
        result = train(cfg, train_samples, out / f"row_{row}")
        params[row] = parameter_summary(result.model)
        reports[row] = evaluate_samples(result.model, test_samples, cfg.input_size, cfg.exclude_background)
    res = AblationResult(reports, params, check_ablation_params(params))
    write_ablation(res, out)
    return res


def smoothed(values: list[float], window: int = 20) -> np.ndarray:
    """Trailing moving average over full windows."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v[:0]
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[window:] - c[:-window]) / window


def is_non_increasing(values, tol: float = 0.0) -> bool:
    v = np.asarray(values)
    return bool(np.all(np.diff(v) <= tol)) if len(v) > 1 else True


def final_loss(history: list[dict]) -> float:
    return history[-1]["total"] if history else math.nan
