"""Synthetic phase-contrast-like frames with tiny flagellated bodies.

Each frame is rendered from an explicit object list, and that list is written
to ``ledger.json`` so dataset statistics can be checked against it exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage as ndi

from .dataset import DataError, Sample, derive_edge, write_attributes

log = logging.getLogger(__name__)

EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class SynthConfig:
    n_images: int = 16
    size: int = 352
    min_objects: int = 1
    max_objects: int = 17
    mean_extra_objects: float = 2.0
    min_area_ratio: float = 0.00029
    max_area_ratio: float = 0.01179
    median_area_ratio: float = 0.0013
    background_fraction: float = 0.2
    max_distractors: int = 4
    p_flagella: float = 0.5
    p_blur: float = 0.2
    p_occlusion: float = 0.15
    p_squeeze: float = 0.15
    p_out_of_view: float = 0.1
    n_cases: int = 4
    train_fraction: float = 0.73
    max_tries: int = 200

    def validate(self) -> None:
        if not 1 <= self.min_objects <= self.max_objects:
            raise DataError(f"need 1 <= min_objects <= max_objects, got {self.min_objects}, {self.max_objects}")
        if not 0 < self.min_area_ratio <= self.max_area_ratio < 1:
            raise DataError("area ratios must satisfy 0 < min <= max < 1")
        # dilated bodies must fit with room to spare
        if self.max_objects * self.min_area_ratio > 0.5:
            raise DataError(
                f"{self.max_objects} objects of at least {self.min_area_ratio:.2%} cannot be packed "
                "without touching"
            )
        if self.size < 8 or self.n_images < 0 or self.n_cases < 1:
            raise DataError("size >= 8, n_images >= 0 and n_cases >= 1 required")


@dataclass
class ObjectRecord:
    center: tuple[float, float]
    axes: tuple[float, float]
    angle: float
    area_px: int = 0
    flagella: int = 0
    blurred: bool = False
    occluded: bool = False
    squeezed: bool = False
    out_of_view: bool = False


@dataclass
class FrameRecord:
    file: str
    case: int
    frame: int
    split: str
    background: bool
    attributes: list[str] = field(default_factory=list)
    objects: list[ObjectRecord] = field(default_factory=list)
    distractors: int = 0


class _Canvas:
    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        yy, xx = np.mgrid[0:size, 0:size]
        self.yy = yy.astype(np.float64)
        self.xx = xx.astype(np.float64)

    def ellipse(self, cy, cx, a, b, angle) -> np.ndarray:
        c, s = math.cos(angle), math.sin(angle)
        dy, dx = self.yy - cy, self.xx - cx
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0

    def disk(self, cy, cx, r) -> np.ndarray:
        return (self.yy - cy) ** 2 + (self.xx - cx) ** 2 <= r * r

    def curve(self, pts: np.ndarray) -> np.ndarray:
        """Rasterize a cubic Bezier densely enough to stay 8-connected."""
        length = np.sum(np.hypot(*np.diff(pts, axis=0).T))
        t = np.linspace(0.0, 1.0, max(int(length * 4), 8))[:, None]
        p = ((1 - t) ** 3) * pts[0] + 3 * ((1 - t) ** 2) * t * pts[1] + 3 * (1 - t) * t**2 * pts[2] + t**3 * pts[3]
        out = np.zeros((self.size, self.size), dtype=bool)
        ij = np.rint(p).astype(int)
        ok = (ij[:, 0] >= 0) & (ij[:, 0] < self.size) & (ij[:, 1] >= 0) & (ij[:, 1] < self.size)
        out[ij[ok, 0], ij[ok, 1]] = True
        return out


def _connected(mask: np.ndarray) -> bool:
    return mask.any() and ndi.label(mask, structure=EIGHT)[1] == 1


def _sample_area(cfg: SynthConfig, rng) -> float:
    ratio = math.exp(rng.normal(math.log(cfg.median_area_ratio), 0.7))
    return float(np.clip(ratio, cfg.min_area_ratio, cfg.max_area_ratio))


def _place_object(cv: _Canvas, cfg: SynthConfig, occupied: np.ndarray):
    rng, n = cv.rng, cv.size
    for _ in range(cfg.max_tries):
        area = _sample_area(cfg, rng) * n * n
        squeezed = rng.random() < cfg.p_squeeze
        aspect = rng.uniform(2.2, 3.0) if squeezed else rng.uniform(1.0, 1.8)
        a = max(math.sqrt(area * aspect / math.pi), 0.6)
        b = max(math.sqrt(area / (aspect * math.pi)), 0.6)
        angle = rng.uniform(0, math.pi)
        ov = rng.random() < cfg.p_out_of_view
        if ov:
            # centre within one semi-axis of an edge so the body is clipped
            side = rng.integers(4)
            along = rng.uniform(0, n - 1)
            off = rng.uniform(-0.5 * b, 0.5 * b)
            cy, cx = [(off, along), (n - 1 - off, along), (along, off), (along, n - 1 - off)][side]
        else:
            cy, cx = rng.uniform(a, n - 1 - a), rng.uniform(a, n - 1 - a)
        body = cv.ellipse(cy, cx, a, b, angle)
        if not body.any():
            iy, ix = int(round(cy)), int(round(cx))
            if not (0 <= iy < n and 0 <= ix < n):
                continue
            body[iy, ix] = True
        flag = np.zeros_like(body)
        n_flag = 0
        if rng.random() < cfg.p_flagella:
            n_flag = int(rng.integers(1, 4))
            for _ in range(n_flag):
                theta = angle + rng.normal(0, 0.6) + (math.pi if rng.random() < 0.3 else 0.0)
                d = np.array([math.sin(theta), math.cos(theta)])
                start = np.array([cy, cx]) + d * a * 0.8
                length = a * rng.uniform(1.0, 2.0) + 2
                normal = np.array([-d[1], d[0]])
                pts = np.stack([
                    start,
                    start + d * length / 3 + normal * rng.normal(0, length / 4),
                    start + 2 * d * length / 3 + normal * rng.normal(0, length / 4),
                    start + d * length,
                ])
                flag |= cv.curve(pts)
        mask = body | flag
        if not _connected(mask):
            continue
        if (ndi.binary_dilation(mask, EIGHT) & occupied).any():
            continue
        clipped = ov or body.sum() < np.pi * a * b * 0.8
        rec = ObjectRecord(
            center=(float(cy), float(cx)),
            axes=(float(a), float(b)),
            angle=float(angle),
            flagella=n_flag,
            squeezed=squeezed,
            out_of_view=bool(ov and clipped),
        )
        return rec, body, flag
    return None


def _render_layer(img, intensity, alpha, blur_sigma=0.0):
    if blur_sigma > 0:
        intensity = ndi.gaussian_filter(intensity * alpha, blur_sigma)
        alpha = ndi.gaussian_filter(alpha, blur_sigma)
        intensity = np.divide(intensity, alpha, out=np.zeros_like(intensity), where=alpha > 1e-6)
    return img * (1 - alpha) + intensity * alpha


def _body_texture(cv: _Canvas, body, level, rng):
    edge = body & ~ndi.binary_erosion(body)
    tex = level + 0.05 * ndi.gaussian_filter(rng.normal(size=body.shape), 1.0)
    # bright phase halo on the rim
    return np.where(edge, np.minimum(level + 0.15, 1.0), tex)


def render_frame(cfg: SynthConfig, rng: np.random.Generator, background: bool):
    """Render one frame. Returns (rgb uint8, mask, object records, distractor count)."""
    n = cfg.size
    cv = _Canvas(n, rng)
    base = rng.uniform(0.12, 0.22)
    low = ndi.gaussian_filter(rng.normal(size=(n, n)), n / 8)
    low = low / (np.abs(low).max() + 1e-9)
    img = base + 0.05 * low
    occupied = np.zeros((n, n), dtype=bool)
    mask = np.zeros((n, n), dtype=bool)
    objects = []

    if not background:
        want = int(np.clip(cfg.min_objects + rng.poisson(cfg.mean_extra_objects), cfg.min_objects, cfg.max_objects))
        for _ in range(want):
            placed = _place_object(cv, cfg, occupied)
            if placed is None:
                break
            rec, body, flag = placed
            obj = body | flag
            if rng.random() < cfg.p_occlusion:
                obj, body, flag, occ = _occlude(cv, cfg, obj, body, flag, occupied)
                rec.occluded = occ is not None
            else:
                occ = None
            level = rng.uniform(0.55, 0.8)
            intensity = _body_texture(cv, body, level, rng) * body + (level - 0.1) * (flag & ~body)
            rec.blurred = bool(rng.random() < cfg.p_blur)
            sigma = rng.uniform(1.0, 2.0) if rec.blurred else 0.0
            img = _render_layer(img, intensity, obj.astype(np.float64), sigma)
            if occ is not None:
                img = _render_layer(img, _leukocyte(cv, occ, rng), occ.astype(np.float64))
            rec.area_px = int(obj.sum())
            objects.append(rec)
            mask |= obj
            occupied |= obj | (occ if occ is not None else False)
        if not objects:
            raise DataError("could not place any object; config is unsatisfiable at this size")

    n_distract = int(rng.integers(0, cfg.max_distractors + 1))
    if background:
        n_distract = max(n_distract, 1)
    placed_d = 0
    for _ in range(n_distract):
        for _ in range(cfg.max_tries):
            r = math.sqrt(_sample_area(cfg, rng) * n * n / math.pi) * rng.uniform(1.0, 1.5)
            r = max(r, 1.0)
            cy, cx = rng.uniform(0, n - 1), rng.uniform(0, n - 1)
            disk = cv.disk(cy, cx, r)
            if disk.any() and not (ndi.binary_dilation(disk, EIGHT) & occupied).any():
                img = _render_layer(img, _leukocyte(cv, disk, rng), disk.astype(np.float64))
                occupied |= disk
                placed_d += 1
                break

    img = img + rng.normal(0, 0.02, size=img.shape)
    tint = np.array([1.0, 0.97, 0.92])
    rgb = np.clip(img[..., None] * tint * 255.0, 0, 255).round().astype(np.uint8)
    return rgb, mask, objects, placed_d


def _leukocyte(cv: _Canvas, disk, rng):
    level = rng.uniform(0.5, 0.75)
    grain = ndi.gaussian_filter(rng.normal(size=disk.shape), 0.7)
    return np.clip(level + 0.08 * grain, 0, 1) * disk


def _occlude(cv: _Canvas, cfg, obj, body, flag, occupied):
    """Cover part of an object with a distractor; the mask loses the covered pixels."""
    rng = cv.rng
    ys, xs = np.nonzero(body)
    rad = max(math.sqrt(body.sum() / math.pi), 1.0)
    for _ in range(cfg.max_tries // 4):
        k = rng.integers(len(ys))
        r = rad * rng.uniform(0.6, 1.0)
        ang = rng.uniform(0, 2 * math.pi)
        occ = cv.disk(ys[k] + r * math.sin(ang), xs[k] + r * math.cos(ang), r)
        left = obj & ~occ
        if (
            left.sum() >= 0.3 * obj.sum()
            and left.sum() < obj.sum()
            and _connected(left)
            and not (ndi.binary_dilation(occ, EIGHT) & occupied).any()
        ):
            return left, body & ~occ, flag & ~occ, occ
    return obj, body, flag, None


def frame_attributes(objects: list[ObjectRecord], mask: np.ndarray) -> list[str]:
    if not objects:
        return []
    attrs = []
    if len(objects) >= 2:
        attrs.append("MO")
    if mask.mean() <= 0.1:
        attrs.append("SO")
    if any(o.out_of_view for o in objects):
        attrs.append("OV")
    if any(o.flagella for o in objects):
        attrs.append("CS")
    if any(o.occluded for o in objects):
        attrs.append("OC")
    if any(o.blurred for o in objects):
        attrs.append("OF")
    if any(o.squeezed for o in objects):
        attrs.append("SQ")
    return attrs


def _splits(cfg: SynthConfig) -> list[tuple[int, int, str]]:
    """(case, frame, split) per image; earliest frames of each case go to train."""
    per_case = [0] * cfg.n_cases
    out = []
    for i in range(cfg.n_images):
        case = i % cfg.n_cases
        out.append((case, per_case[case]))
        per_case[case] += 1
    n_train = [int(round(cfg.train_fraction * k)) for k in per_case]
    return [(c, f, "train" if f < n_train[c] else "test") for c, f in out]


def generate_samples(cfg: SynthConfig, seed: int) -> tuple[list[Sample], list[FrameRecord]]:
    cfg.validate()
    seeds = np.random.SeedSequence(seed).spawn(cfg.n_images)
    n_bg = int(round(cfg.background_fraction * cfg.n_images))
    bg_rng = np.random.default_rng(seed)
    bg_set = set(bg_rng.choice(cfg.n_images, size=n_bg, replace=False).tolist()) if n_bg else set()
    samples, frames = [], []
    for i, (case, frame, split) in enumerate(_splits(cfg)):
        rng = np.random.default_rng(seeds[i])
        background = i in bg_set
        rgb, mask, objects, n_d = render_frame(cfg, rng, background)
        attrs = frame_attributes(objects, mask)
        name = f"case{case:02d}_{frame:04d}"
        samples.append(Sample(name, rgb, mask, derive_edge(mask), tuple(attrs)))
        frames.append(FrameRecord(f"{name}.png", case, frame, split, background, attrs, objects, n_d))
    return samples, frames


def synth_generate(cfg: SynthConfig, seed: int, out_dir) -> list[FrameRecord]:
    """Write ``train/`` and ``test/`` splits plus ``ledger.json`` under ``out_dir``."""
    out = Path(out_dir)
    samples, frames = generate_samples(cfg, seed)
    rows = {"train": [], "test": []}
    for split in rows:
        for sub in ("Images", "GT_Object", "GT_Edge"):
            (out / split / sub).mkdir(parents=True, exist_ok=True)
    for s, fr in zip(samples, frames):
        d = out / fr.split
        Image.fromarray(s.image).save(d / "Images" / fr.file)
        Image.fromarray(s.mask.astype(np.uint8) * 255).save(d / "GT_Object" / fr.file)
        Image.fromarray(s.edge.astype(np.uint8) * 255).save(d / "GT_Edge" / fr.file)
        rows[fr.split].append((fr.file, s.attributes))
    for split, r in rows.items():
        write_attributes(out / split / "attributes.csv", r)
    ledger = {"seed": seed, "config": asdict(cfg), "images": [asdict(f) for f in frames]}
    (out / "ledger.json").write_text(json.dumps(ledger, indent=1) + "\n")
    log.info("wrote %d images (%d train / %d test) to %s", len(frames), len(rows["train"]), len(rows["test"]), out)
    return frames


def read_ledger(path) -> dict:
    return json.loads(Path(path).read_text())
