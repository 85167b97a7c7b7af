from .dataset import (
    ATTRIBUTES,
    DataError,
    DatasetIndex,
    Layout,
    Record,
    Sample,
    augment,
    derive_edge,
    load_index,
    load_sample,
)
from .stats import StatsReport, dataset_stats, ledger_stats
from .synth import SynthConfig, generate_samples, synth_generate

__all__ = [
    "ATTRIBUTES",
    "DataError",
    "DatasetIndex",
    "Layout",
    "Record",
    "Sample",
    "StatsReport",
    "SynthConfig",
    "augment",
    "dataset_stats",
    "derive_edge",
    "generate_samples",
    "ledger_stats",
    "load_index",
    "load_sample",
    "synth_generate",
]
