"""Object counts, size ratios and attribute co-occurrence for a dataset split."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .dataset import ATTRIBUTES, DatasetIndex, read_mask

EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class StatsReport:
    split: str
    n_images: int
    n_background: int
    objects_per_image: dict[str, int] = field(default_factory=dict)
    area_ratios: list[float] = field(default_factory=list)
    attribute_counts: dict[str, int] = field(default_factory=dict)
    co_attributes: list[list[int]] = field(default_factory=list)

    @property
    def mean_objects(self) -> float:
        """Averaged over images that contain at least one object."""
        counts = [c for c in self.objects_per_image.values() if c]
        return math.fsum(counts) / len(counts) if counts else 0.0

    @property
    def max_objects(self) -> int:
        return max(self.objects_per_image.values(), default=0)

    @property
    def min_ratio(self) -> float:
        return min(self.area_ratios, default=0.0)

    @property
    def max_ratio(self) -> float:
        return max(self.area_ratios, default=0.0)

    @property
    def mean_ratio(self) -> float:
        return math.fsum(self.area_ratios) / len(self.area_ratios) if self.area_ratios else 0.0

    def summary(self) -> dict:
        return {
            "split": self.split,
            "n_images": self.n_images,
            "n_background": self.n_background,
            "n_objects": len(self.area_ratios),
            "mean_objects": self.mean_objects,
            "max_objects": self.max_objects,
            "min_ratio": self.min_ratio,
            "mean_ratio": self.mean_ratio,
            "max_ratio": self.max_ratio,
            "attribute_counts": self.attribute_counts,
        }

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary(), **asdict(self)}, indent=1)

    def format(self) -> str:
        s = self.summary()
        lines = [
            f"split {s['split']}: {s['n_images']} images, {s['n_background']} background, {s['n_objects']} objects",
            f"objects/image: mean {s['mean_objects']:.3f}, max {s['max_objects']}",
            f"size ratio: min {s['min_ratio']:.5%}, mean {s['mean_ratio']:.5%}, max {s['max_ratio']:.5%}",
            "attributes: " + " ".join(f"{k}={v}" for k, v in self.attribute_counts.items()),
            "co-attributes:",
            "     " + " ".join(f"{a:>4}" for a in ATTRIBUTES),
        ]
        for a, row in zip(ATTRIBUTES, self.co_attributes):
            lines.append(f"{a:>4} " + " ".join(f"{v:>4d}" for v in row))
        return "\n".join(lines) + "\n"


def component_areas(mask: np.ndarray) -> list[int]:
    labels, n = ndi.label(np.asarray(mask, dtype=bool), structure=EIGHT)
    return np.bincount(labels.ravel(), minlength=n + 1)[1:].tolist()


def co_attribute_table(attribute_sets) -> list[list[int]]:
    pos = {a: i for i, a in enumerate(ATTRIBUTES)}
    table = np.zeros((len(ATTRIBUTES), len(ATTRIBUTES)), dtype=int)
    for attrs in attribute_sets:
        idx = sorted({pos[a] for a in attrs})
        for i in idx:
            for j in idx:
                table[i, j] += 1
    return table.tolist()


def _build(split, names, areas_per_image, sizes, attribute_sets, backgrounds) -> StatsReport:
    # canonical order: images by name, objects by area
    order = sorted(range(len(names)), key=names.__getitem__)
    names, areas_per_image, sizes, attribute_sets, backgrounds = (
        [seq[i] for i in order] for seq in (names, areas_per_image, sizes, attribute_sets, backgrounds)
    )
    ratios = []
    for areas, size in zip(areas_per_image, sizes):
        ratios.extend(a / size for a in sorted(areas))
    hist = {a: sum(a in s for s in attribute_sets) for a in ATTRIBUTES}
    return StatsReport(
        split=split,
        n_images=len(names),
        n_background=sum(backgrounds),
        objects_per_image={n: len(a) for n, a in zip(names, areas_per_image)},
        area_ratios=ratios,
        attribute_counts=hist,
        co_attributes=co_attribute_table(attribute_sets),
    )


def dataset_stats(index: DatasetIndex) -> StatsReport:
    """Objects are 8-connected components of the object mask."""
    names, areas, sizes, attrs, bgs = [], [], [], [], []
    for rec in index.records:
        mask = read_mask(rec.mask)
        names.append(rec.name)
        areas.append(component_areas(mask))
        sizes.append(mask.size)
        attrs.append(rec.attributes)
        bgs.append(rec.background)
    return _build(index.split, names, areas, sizes, attrs, bgs)


def ledger_stats(ledger: dict, split: str) -> StatsReport:
    """The same report computed from a generator ledger instead of the pixels."""
    size = ledger["config"]["size"] ** 2
    frames = [f for f in ledger["images"] if f["split"] == split]
    return _build(
        split,
        [f["file"].rsplit(".", 1)[0] for f in frames],
        [[o["area_px"] for o in f["objects"]] for f in frames],
        [size] * len(frames),
        [tuple(f["attributes"]) for f in frames],
        [f["background"] for f in frames],
    )
