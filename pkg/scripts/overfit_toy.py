"""Overfit the toy-backbone model on 8 synthetic 64x64 frames and report mDice."""

import argparse
import tempfile

from tvnet.experiments import run_overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", help="keep the run here (default: temp dir)")
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        res = run_overfit(args.out_dir or tmp)
    print(f"iterations {res.iterations}")
    print(f"loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}")
    print(f"training mDice {res.mdice:.4f}")


if __name__ == "__main__":
    main()
