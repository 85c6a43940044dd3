"""
Write a synthetic hourly feeder CSV (and its metadata sidecar).

    python scripts/make_synthetic_dataset.py data/feeder.csv --loads 20 --days 30 --seed 7
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from modules.dataset_loader import synthetic_dataset, write_csv, write_metadata  # noqa: E402


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("path")
    parser.add_argument("--loads", type=int, default=20)
    parser.add_argument("--days", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--layout", choices=("wide", "long"), default="wide")
    args = parser.parse_args(argv)

    dataset = synthetic_dataset(args.loads, args.days, args.seed)
    write_csv(dataset, args.path, args.layout)
    write_metadata(dataset, args.path + ".json")
    print(f"Generated file: {args.path} ({args.loads} loads x {args.days} days)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
