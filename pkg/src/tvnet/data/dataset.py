"""On-disk dataset layout, sample loading, edge derivation and augmentation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage as ndi

log = logging.getLogger(__name__)

ATTRIBUTES = ("MO", "SO", "OV", "CS", "OC", "OF", "SQ")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class DataError(Exception):
    """Malformed or incomplete dataset on disk."""


@dataclass(frozen=True)
class Layout:
    images: str = "Images"
    masks: str = "GT_Object"
    edges: str = "GT_Edge"
    attributes: str = "attributes.csv"


@dataclass
class Record:
    name: str
    image: Path
    mask: Path
    edge: Path | None
    attributes: tuple[str, ...] = ()
    background: bool = False


@dataclass
class DatasetIndex:
    split: str
    records: list[Record] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def foreground(self) -> list[Record]:
        return [r for r in self.records if not r.background]


@dataclass
class Sample:
    name: str
    image: np.ndarray  # H x W x 3 uint8
    mask: np.ndarray  # H x W bool
    edge: np.ndarray  # H x W bool
    attributes: tuple[str, ...] = ()

    def __eq__(self, other):
        return (
            isinstance(other, Sample)
            and self.name == other.name
            and self.attributes == other.attributes
            and np.array_equal(self.image, other.image)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.edge, other.edge)
        )


def parse_attributes(text: str, where: str = "") -> tuple[str, ...]:
    codes = tuple(c.strip() for c in text.split(";") if c.strip())
    bad = [c for c in codes if c not in ATTRIBUTES]
    if bad:
        raise DataError(f"unknown attribute codes {bad} {where}".strip())
    return codes


def read_attributes(path: Path) -> dict[str, tuple[str, ...]]:
    out = {}
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row or (lineno == 1 and row[0].strip().lower() == "filename"):
                continue
            if len(row) > 2:
                raise DataError(f"{path}:{lineno}: expected 'filename,codes'")
            out[Path(row[0].strip()).stem] = parse_attributes(
                row[1] if len(row) > 1 else "", f"at {path}:{lineno}"
            )
    return out


def write_attributes(path: Path, rows: list[tuple[str, tuple[str, ...]]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["filename", "attributes"])
        for name, codes in rows:
            writer.writerow([name, ";".join(codes)])


def _by_stem(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        return {}
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_index(root, split: str, layout: Layout = Layout()) -> DatasetIndex:
    base = Path(root) / split
    img_dir = base / layout.images
    if not img_dir.is_dir():
        raise DataError(f"missing image folder {img_dir}")
    images = _by_stem(img_dir)
    masks = _by_stem(base / layout.masks)
    edge_dir = base / layout.edges
    edges = _by_stem(edge_dir)
    attr_path = base / layout.attributes
    attrs = read_attributes(attr_path) if attr_path.exists() else {}
    unknown = sorted(set(attrs) - set(images))
    if unknown:
        raise DataError(f"{attr_path} lists images that do not exist: {unknown}")

    records = []
    for stem, img in images.items():
        if stem not in masks:
            raise DataError(f"no mask for image {img.name} in {base / layout.masks}")
        background = not read_mask(masks[stem]).any()
        edge = edges.get(stem)
        if edge is None and edge_dir.is_dir() and not background:
            raise DataError(f"no edge map for image {img.name} in {edge_dir}")
        records.append(Record(stem, img, masks[stem], edge, attrs.get(stem, ()), background))
    n_bg = sum(r.background for r in records)
    log.info("split %s: %d images (%d background)", split, len(records), n_bg)
    return DatasetIndex(split, records)


def load_sample(record: Record) -> Sample:
    image = read_image(record.image)
    mask = read_mask(record.mask)
    if mask.shape != image.shape[:2]:
        raise DataError(f"mask size {mask.shape} differs from image {image.shape[:2]} for {record.name}")
    edge = read_mask(record.edge) if record.edge is not None else derive_edge(mask)
    if edge.shape != mask.shape:
        raise DataError(f"edge size {edge.shape} differs from mask {mask.shape} for {record.name}")
    return Sample(record.name, image, mask, edge, record.attributes)


def derive_edge(mask: np.ndarray, width: int = 1) -> np.ndarray:
    """Inner boundary band of a binary mask, ``width`` pixels thick.

    Pixels beyond the image border count as foreground, so objects clipped by
    the frame get no edge along it and a constant mask has no edge at all.
    """
    mask = np.asarray(mask, dtype=bool)
    structure = np.ones((2 * width + 1, 2 * width + 1), dtype=bool)
    return mask & ~ndi.binary_erosion(mask, structure=structure, border_value=1)


# --- augmentation ----------------------------------------------------------


def hflip(s: Sample) -> Sample:
    return replace(s, image=s.image[:, ::-1].copy(), mask=s.mask[:, ::-1].copy(), edge=s.edge[:, ::-1].copy())


def vflip(s: Sample) -> Sample:
    return replace(s, image=s.image[::-1].copy(), mask=s.mask[::-1].copy(), edge=s.edge[::-1].copy())


def _resize_float(a: np.ndarray, size: int) -> np.ndarray:
    im = Image.fromarray(a.astype(np.float32), mode="F")
    return np.asarray(im.resize((size, size), Image.BILINEAR))


def resize(s: Sample, size: int) -> Sample:
    if s.mask.shape == (size, size):
        return s
    image = np.asarray(Image.fromarray(s.image).resize((size, size), Image.BILINEAR))
    mask = _resize_float(s.mask, size) >= 0.5
    # any coverage keeps thin edges alive when shrinking
    edge = _resize_float(s.edge, size) > 0
    return replace(s, image=image, mask=mask, edge=edge)


def augment(s: Sample, size: int, rng: np.random.Generator | None = None, flip: bool = True) -> Sample:
    s = resize(s, size)
    if flip and rng is not None:
        if rng.random() < 0.5:
            s = hflip(s)
        if rng.random() < 0.5:
            s = vflip(s)
    return s
