"""``tvnet`` command line: train, eval, predict, synth, stats, ablate.

Config files are flat ``key = value`` text; any ``--key value`` pair after the
subcommand's own flags overrides the file. Exit codes: 0 success, 2 usage or
config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_io
from .checkpoint import CheckpointError
from .config import ConfigError, TrainConfig
from .data.dataset import DataError, load_index
from .data.stats import dataset_stats, ledger_stats
from .data.synth import SynthConfig, read_ledger, synth_generate
from .metrics import MetricsError, evaluate_directory, write_report

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("tvnet")


class UsageError(Exception):
    pass


def _overrides(extra: list[str]) -> dict[str, str]:
    """Turn ``--key value`` / ``--key=value`` pairs into a dict."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise UsageError(f"missing value for {tok}")
        out[key.replace("-", "_")] = value
    return out


def _setup_logging(out_dir: Path, name: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger()
    for h in list(root.handlers):
        if getattr(h, "_tvnet", False):
            root.removeHandler(h)
            h.close()
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    for h in (logging.FileHandler(out_dir / f"{name}.log", mode="w"), logging.StreamHandler(sys.stdout)):
        h.setFormatter(fmt)
        h._tvnet = True
        root.addHandler(h)
    root.setLevel(logging.INFO)


def _echo_config(cfg, out_dir: Path) -> None:
    text = config_io.dump(cfg)
    (out_dir / "effective_config.txt").write_text(text)
    log.info("effective config:\n%s", text.rstrip())


def _need_dir(path, what: str) -> Path:
    if not str(path):
        raise ConfigError(f"{what} not set")
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"{what} {p} does not exist")
    return p


# --- subcommands -----------------------------------------------------------


def cmd_train(args, extra) -> None:
    from .training import train_from_config

    cfg = config_io.load(TrainConfig, args.config, _overrides(extra)).validate()
    _echo_config(cfg, args.out_dir)
    _need_dir(cfg.data_root, "data root")
    result = train_from_config(cfg, args.out_dir, resume=args.resume)
    log.info("finished at iteration %d; checkpoint %s", result.iterations, result.checkpoint)


def cmd_eval(args, extra) -> None:
    if extra:
        raise UsageError(f"unknown arguments {extra}")
    report = evaluate_directory(
        _need_dir(args.pred_dir, "prediction dir"),
        _need_dir(args.gt_dir, "ground-truth dir"),
        exclude_background=args.exclude_background,
        adaptive=args.adaptive,
    )
    write_report(report, args.out_dir)
    log.info("%s", report.format_row())


def cmd_predict(args, extra) -> None:
    from .training import predict

    if extra:
        raise UsageError(f"unknown arguments {extra}")
    predict(args.checkpoint, _need_dir(args.image_dir, "image dir"), args.out_dir, args.input_size)


def cmd_synth(args, extra) -> None:
    values = _overrides(extra)
    if args.n is not None:
        values["n_images"] = str(args.n)
    cfg = config_io.load(SynthConfig, args.config, values)
    _echo_config(cfg, args.out_dir)
    synth_generate(cfg, args.seed, args.out_dir)


def cmd_stats(args, extra) -> None:
    if extra:
        raise UsageError(f"unknown arguments {extra}")
    root = _need_dir(args.data_root, "data root")
    report = dataset_stats(load_index(root, args.split))
    (args.out_dir / f"stats_{args.split}.json").write_text(report.to_json() + "\n")
    log.info("\n%s", report.format().rstrip())
    ledger = root / "ledger.json"
    if ledger.exists():
        match = report == ledger_stats(read_ledger(ledger), args.split)
        log.info("generator ledger %s", "matches" if match else "DOES NOT match")


def cmd_ablate(args, extra) -> None:
    from .training import ablation_suite, format_ablation, load_split

    cfg = config_io.load(TrainConfig, args.config, _overrides(extra)).validate()
    _echo_config(cfg, args.out_dir)
    _need_dir(cfg.data_root, "data root")
    result = ablation_suite(
        cfg, load_split(cfg.data_root, cfg.train_split), load_split(cfg.data_root, cfg.eval_split), args.out_dir
    )
    log.info("\n%s", format_ablation(result).rstrip())
    (args.out_dir / "ablation_params.json").write_text(json.dumps(result.params, indent=1) + "\n")
    for p in result.problems:
        log.warning("parameter check: %s", p)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvnet", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="{train,eval,predict,synth,stats,ablate}")

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out-dir", type=Path, required=True)
        p.set_defaults(fn=fn)
        return p

    p = add("train", cmd_train, "train a model; extra --key value pairs override the config")
    p.add_argument("--config")
    p.add_argument("--resume")

    p = add("eval", cmd_eval, "score a directory of prediction maps")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--exclude-background", type=_bool, default=True, metavar="BOOL")
    p.add_argument("--adaptive", action="store_true", help="adaptive-threshold F/Dice/IoU")

    p = add("predict", cmd_predict, "write probability maps for a folder of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image-dir", required=True)
    p.add_argument("--input-size", type=int)

    p = add("synth", cmd_synth, "render a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = add("stats", cmd_stats, "dataset statistics for one split")
    p.add_argument("--data-root", required=True)
    p.add_argument("--split", default="train")

    p = add("ablate", cmd_ablate, "train and score the four ablation rows")
    p.add_argument("--config")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command not in ("train", "synth", "ablate") and extra:
        parser.print_usage(sys.stderr)
        print(f"tvnet: error: unrecognized arguments: {' '.join(extra)}", file=sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.out_dir, args.command)
    try:
        args.fn(args, extra)
    except (UsageError, ConfigError) as e:
        log.error("%s", e)
        return EXIT_USAGE
    except (DataError, MetricsError, FileNotFoundError) as e:
        log.error("%s", e)
        return EXIT_DATA
    except (CheckpointError, RuntimeError, OSError) as e:
        log.error("%s", e)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
