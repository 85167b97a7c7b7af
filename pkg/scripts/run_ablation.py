"""Train the four ablation rows on the synthetic benchmark and print the table."""

import argparse

from tvnet.experiments import run_ablation
from tvnet.training import format_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/ablation")
    args = ap.parse_args()
    result = run_ablation(args.out_dir)
    print(format_ablation(result))
    for p in result.problems:
        print("parameter check:", p)


if __name__ == "__main__":
    main()
