"""Print object-count and size statistics for the train and test splits of a dataset root."""

import argparse

from tvnet.data import dataset_stats, load_index


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("root")
    args = ap.parse_args()
    for split in ("train", "test"):
        print(dataset_stats(load_index(args.root, split)).format())


if __name__ == "__main__":
    main()
