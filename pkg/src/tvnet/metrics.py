"""Seven-measure evaluation for binary segmentation maps.

All measures take a prediction map in [0, 1] and a binary ground truth of the
same shape. Threshold-swept measures (E-max, mean F, mDice, mIoU) binarize the
prediction at 256 cut points ``(k + 0.5) / 256`` with ``pred >= cut``, so a
perfect binary prediction is perfect at every cut.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage as ndi

log = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
N_THRESHOLDS = 256
THRESHOLDS = (np.arange(N_THRESHOLDS, dtype=np.float64) + 0.5) / N_THRESHOLDS
FMEASURE_BETA2 = 0.3
WEIGHTED_F_BETA2 = 1.0

COLUMNS = ("S_alpha", "E_phi_max", "F_beta_w", "F_beta_mean", "MAE", "mDice", "mIoU")
IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}


class MetricsError(ValueError):
    """Raised on mismatched inputs to the evaluation routines."""


@dataclass(frozen=True)
class MetricsReport:
    S_alpha: float
    E_phi_max: float
    F_beta_w: float
    F_beta_mean: float
    MAE: float
    mDice: float
    mIoU: float

    def as_row(self) -> list[float]:
        return [getattr(self, c) for c in COLUMNS]

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def format_row(self, name: str = "Ours", digits: int = 3) -> str:
        cells = " | ".join(f"{v:.{digits}f}" for v in self.as_row())
        return f"| {name} | {cells} |"


def _prepare(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise MetricsError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if gt.dtype != bool:
        gt = gt > 0.5
    return pred, gt


# --- MAE -------------------------------------------------------------------


def mae(pred, gt) -> float:
    pred, gt = _prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


# --- S-measure -------------------------------------------------------------


def _std(x: np.ndarray) -> float:
    # sample std, 0 for a single element
    if x.size < 2:
        return 0.0
    return float(np.std(x, ddof=1))


def _object_score(values: np.ndarray) -> float:
    mu = float(np.mean(values))
    return 2.0 * mu / (mu * mu + 1.0 + _std(values) + EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    u = float(np.mean(gt))
    fg = _object_score(pred[gt])
    bg = _object_score(1.0 - pred[~gt])
    return u * fg + (1.0 - u) * bg


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    g = gt.astype(np.float64)
    x, y = float(pred.mean()), float(g.mean())
    sigma_x = float(np.sum((pred - x) ** 2)) / (n - 1 + EPS)
    sigma_y = float(np.sum((g - y) ** 2)) / (n - 1 + EPS)
    sigma_xy = float(np.sum((pred - x) * (g - y))) / (n - 1 + EPS)
    alpha = 4.0 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x + sigma_y)
    if alpha != 0:
        return alpha / (beta + EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    """Split point (row, col): rounded foreground centroid plus one."""
    rows, cols = np.nonzero(gt)
    cy = math.floor(rows.mean() + 0.5)
    cx = math.floor(cols.mean() + 0.5)
    return cy + 1, cx + 1


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    cy, cx = _centroid(gt)
    score = 0.0
    for rs in (slice(0, cy), slice(cy, h)):
        for cs in (slice(0, cx), slice(cx, w)):
            block = gt[rs, cs]
            if block.size == 0:
                continue
            score += block.size / gt.size * _ssim(pred[rs, cs], block)
    return score


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, gt = _prepare(pred, gt)
    y = float(np.mean(gt))
    if y == 0.0:
        return 1.0 - float(pred.mean())
    if y == 1.0:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return max(score, 0.0)


# --- threshold sweep -------------------------------------------------------


def _sweep_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """True/false positive counts at every cut, shape (256,) each."""
    level = np.searchsorted(THRESHOLDS, pred, side="right")
    fg = np.bincount(level[gt].ravel(), minlength=N_THRESHOLDS + 1)
    bg = np.bincount(level[~gt].ravel(), minlength=N_THRESHOLDS + 1)
    # cut k keeps pixels with level > k
    tp = np.cumsum(fg[::-1])[::-1][1:]
    fp = np.cumsum(bg[::-1])[::-1][1:]
    return tp.astype(np.float64), fp.astype(np.float64)


def _enhanced(a: np.ndarray | float, b: np.ndarray | float) -> np.ndarray:
    align = 2.0 * a * b / (a * a + b * b + EPS)
    return (align + 1.0) ** 2 / 4.0


def e_measure_curve(pred, gt) -> np.ndarray:
    """Enhanced-alignment score at each of the 256 cuts (non-empty gt)."""
    pred, gt = _prepare(pred, gt)
    n = float(gt.size)
    n_fg = float(gt.sum())
    tp, fp = _sweep_counts(pred, gt)
    if n_fg == n:
        return (tp + fp) / n
    fn = n_fg - tp
    tn = (n - n_fg) - fp
    mu_f = (tp + fp) / n
    mu_g = n_fg / n
    total = (
        tp * _enhanced(1.0 - mu_f, 1.0 - mu_g)
        + fp * _enhanced(1.0 - mu_f, -mu_g)
        + fn * _enhanced(-mu_f, 1.0 - mu_g)
        + tn * _enhanced(-mu_f, -mu_g)
    )
    return total / n


def e_measure_max(pred, gt) -> float:
    pred, gt = _prepare(pred, gt)
    if not gt.any():
        return 1.0 if not pred.any() else 0.0
    return float(e_measure_curve(pred, gt).max())


def _safe_div(num: np.ndarray, den: np.ndarray, empty: float) -> np.ndarray:
    out = np.full(np.shape(num), empty, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def f_measure_curve(pred, gt, beta2: float = FMEASURE_BETA2) -> np.ndarray:
    pred, gt = _prepare(pred, gt)
    tp, fp = _sweep_counts(pred, gt)
    precision = _safe_div(tp, tp + fp, 0.0)
    recall = _safe_div(tp, np.full_like(tp, gt.sum()), 0.0)
    return _safe_div((1 + beta2) * precision * recall, beta2 * precision + recall, 0.0)


def f_beta_mean(pred, gt, beta2: float = FMEASURE_BETA2, adaptive: bool = False) -> float:
    pred, gt = _prepare(pred, gt)
    if not gt.any():
        return 1.0 if not pred.any() else 0.0
    if adaptive:
        binary = pred >= adaptive_threshold(pred)
        tp = float(np.sum(binary & gt))
        p = tp / binary.sum() if binary.any() else 0.0
        r = tp / gt.sum()
        return (1 + beta2) * p * r / (beta2 * p + r) if (p + r) > 0 else 0.0
    return float(f_measure_curve(pred, gt, beta2).mean())


def adaptive_threshold(pred: np.ndarray) -> float:
    return min(2.0 * float(np.mean(pred)), 1.0)


def dice_iou_curves(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = _prepare(pred, gt)
    tp, fp = _sweep_counts(pred, gt)
    fn = float(gt.sum()) - tp
    dice = _safe_div(2 * tp, 2 * tp + fp + fn, 1.0)
    iou = _safe_div(tp, tp + fp + fn, 1.0)
    return dice, iou


def m_dice_iou(pred, gt, adaptive: bool = False) -> tuple[float, float]:
    if adaptive:
        pred, gt = _prepare(pred, gt)
        binary = pred >= adaptive_threshold(pred)
        tp = float(np.sum(binary & gt))
        union = float(np.sum(binary | gt))
        total = float(binary.sum() + gt.sum())
        if total == 0:
            return 1.0, 1.0
        return 2 * tp / total, tp / union
    dice, iou = dice_iou_curves(pred, gt)
    return float(dice.mean()), float(iou.mean())


# --- weighted F-measure ----------------------------------------------------


def _circle_offsets(d2: int) -> list[tuple[int, int]]:
    """Integer offsets (dy, dx) with dy^2 + dx^2 == d2, sorted lexicographically."""
    out = []
    r = math.isqrt(d2)
    for dy in range(-r, r + 1):
        rem = d2 - dy * dy
        dx = math.isqrt(rem)
        if dx * dx == rem:
            out.extend([(dy, -dx), (dy, dx)] if dx else [(dy, 0)])
    return out


def nearest_foreground(gt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Euclidean distance to, and (row, col) of, the nearest foreground pixel.

    Ties between equidistant foreground pixels go to the smallest (row, col).
    """
    gt = np.asarray(gt, dtype=bool)
    if not gt.any():
        raise MetricsError("nearest_foreground needs a non-empty mask")
    dist = ndi.distance_transform_edt(~gt)
    d2 = np.rint(dist * dist).astype(np.int64)
    near_r, near_c = np.indices(gt.shape)
    h, w = gt.shape
    rows, cols = np.nonzero(~gt)
    keys = d2[rows, cols]
    for v in np.unique(keys):
        sel = keys == v
        r, c = rows[sel], cols[sel]
        todo = np.ones(r.shape, dtype=bool)
        for dy, dx in _circle_offsets(int(v)):
            rr, cc = r + dy, c + dx
            ok = todo & (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            hit = np.zeros_like(ok)
            hit[ok] = gt[rr[ok], cc[ok]]
            near_r[r[hit], c[hit]] = rr[hit]
            near_c[r[hit], c[hit]] = cc[hit]
            todo &= ~hit
            if not todo.any():
                break
    return dist, near_r, near_c


def matlab_gaussian(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    m = (size - 1) / 2.0
    y, x = np.ogrid[-m : m + 1, -m : m + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    return h / h.sum()


def f_beta_weighted(pred, gt, beta2: float = WEIGHTED_F_BETA2) -> float:
    pred, gt = _prepare(pred, gt)
    if not gt.any():
        return 1.0 if not pred.any() else 0.0
    if not pred.any():
        # zero-padded smoothing would otherwise credit border pixels
        return 0.0
    dist, near_r, near_c = nearest_foreground(gt)
    err = np.abs(pred - gt)
    err_t = err[near_r, near_c]
    err_a = ndi.correlate(err_t, matlab_gaussian(), mode="constant", cval=0.0)
    min_err = np.where(gt & (err_a < err), err_a, err)
    importance = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_err * importance
    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tpw / (tpw + fpw + EPS)
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + EPS))


# --- aggregate -------------------------------------------------------------


def evaluate_pair(pred, gt, alpha: float = 0.5, adaptive: bool = False) -> MetricsReport:
    pred, gt = _prepare(pred, gt)
    dice, iou = m_dice_iou(pred, gt, adaptive=adaptive)
    return MetricsReport(
        S_alpha=s_measure(pred, gt, alpha),
        E_phi_max=e_measure_max(pred, gt),
        F_beta_w=f_beta_weighted(pred, gt),
        F_beta_mean=f_beta_mean(pred, gt, adaptive=adaptive),
        MAE=mae(pred, gt),
        mDice=dice,
        mIoU=iou,
    )


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    if not reports:
        raise MetricsError("no images to evaluate")
    # fsum keeps the mean independent of accumulation order
    return MetricsReport(
        **{c: math.fsum(getattr(r, c) for r in reports) / len(reports) for c in COLUMNS}
    )


def read_prediction(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def read_gt(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def _list_images(directory: Path) -> dict[str, Path]:
    files = {}
    for p in sorted(Path(directory).iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem in files:
                raise MetricsError(f"duplicate image stem {p.stem!r} in {directory}")
            files[p.stem] = p
    return files


def evaluate_directory(
    pred_dir,
    gt_dir,
    exclude_background: bool = True,
    alpha: float = 0.5,
    adaptive: bool = False,
) -> MetricsReport:
    """Mean per-image metrics over prediction/ground-truth pairs matched by file stem."""
    preds = _list_images(Path(pred_dir))
    gts = _list_images(Path(gt_dir))
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    if missing or extra:
        raise MetricsError(f"unmatched files: no prediction for {missing}, no gt for {extra}")
    reports = []
    skipped = 0
    for stem in sorted(gts):
        gt = read_gt(gts[stem])
        if exclude_background and not gt.any():
            skipped += 1
            continue
        pred = read_prediction(preds[stem])
        if pred.shape != gt.shape:
            resized = Image.fromarray(np.uint8(np.rint(pred * 255))).resize(
                (gt.shape[1], gt.shape[0]), Image.BILINEAR
            )
            pred = np.asarray(resized, dtype=np.float64) / 255.0
        reports.append(evaluate_pair(pred, gt, alpha=alpha, adaptive=adaptive))
    log.info("evaluated %d images, skipped %d background", len(reports), skipped)
    return mean_report(reports)


def write_report(report: MetricsReport, out_dir, name: str = "report") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.json"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(COLUMNS)
        writer.writerow([f"{v:.6f}" for v in report.as_row()])
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return csv_path, json_path
