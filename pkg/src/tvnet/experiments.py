"""Fixed desk-scale experiments shared by the scripts and the acceptance suite."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .config import TrainConfig
from .data.synth import SynthConfig, generate_samples
from .training import AblationResult, ablation_suite, evaluate_samples, smoothed, train

# Bodies of 3-8% of a 64x64 frame: a toy backbone's coarsest level is 2x2,
# so realistic 0.1% objects (4 px) would not be learnable in 200 steps.
OVERFIT_SYNTH = SynthConfig(
    n_images=8,
    size=64,
    min_area_ratio=0.03,
    max_area_ratio=0.08,
    median_area_ratio=0.05,
    max_objects=3,
    mean_extra_objects=0.5,
    p_flagella=0.0,
    background_fraction=0.0,
    n_cases=1,
    train_fraction=1.0,
)
OVERFIT_TRAIN = TrainConfig(input_size=64, batch_size=8, epochs=200, max_iters=200, flip=False, seed=0)
OVERFIT_SEED = 0

ABLATION_SYNTH = SynthConfig(
    n_images=40,
    size=128,
    min_area_ratio=0.004,
    max_area_ratio=0.03,
    median_area_ratio=0.01,
    max_objects=6,
    background_fraction=0.1,
    n_cases=4,
)
ABLATION_TRAIN = TrainConfig(input_size=128, batch_size=8, epochs=30, seed=0)
ABLATION_SEED = 1


@dataclass
class OverfitResult:
    mdice: float
    losses: list[float]
    smoothed: list[float]
    iterations: int


def run_overfit(out_dir, train_cfg: TrainConfig = OVERFIT_TRAIN) -> OverfitResult:
    samples, _ = generate_samples(OVERFIT_SYNTH, OVERFIT_SEED)
    result = train(train_cfg, samples, out_dir)
    report = evaluate_samples(result.model, samples, train_cfg.input_size)
    losses = [h["total"] for h in result.history]
    return OverfitResult(report.mDice, losses, smoothed(losses).tolist(), result.iterations)


def run_ablation(out_dir, train_cfg: TrainConfig = ABLATION_TRAIN) -> AblationResult:
    samples, frames = generate_samples(ABLATION_SYNTH, ABLATION_SEED)
    train_s = [s for s, f in zip(samples, frames) if f.split == "train"]
    test_s = [s for s, f in zip(samples, frames) if f.split == "test"]
    return ablation_suite(train_cfg, train_s, test_s, Path(out_dir))


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return dataclasses.replace(cfg, **kw)
