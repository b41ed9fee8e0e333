#!/usr/bin/env python3
"""Materialize the synthetic gaze fixture as an on-disk dataset
(index.csv + PGM images), the same layout MPIIGaze-style data uses."""

import argparse

from glance.synthetic import GazeFixtureOptions, make_gaze_fixture, write_gaze_dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--count", type=int, default=6000)
    ap.add_argument("--size", type=int, default=56)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--subjects", type=int, default=3)
    args = ap.parse_args()

    images, targets = make_gaze_fixture(
        GazeFixtureOptions(count=args.count, size=args.size, seed=args.seed)
    )
    subjects = [f"p{i % args.subjects:02d}" for i in range(args.count)]
    write_gaze_dataset(args.out_dir, images, targets, subjects)
    print(f"wrote {args.count} samples ({args.subjects} subjects) to {args.out_dir}")


if __name__ == "__main__":
    main()
