"""Largest block size M whose HRR 1 s exact rate stays above a threshold, per D.

Sigma is picked from a ladder as the smallest value that puts the first
dimension's capacity strictly inside the M grid; every D is then measured at
that sigma. Pass --sigma to fix it instead.

    python3 scripts/capacity.py --dims 128,256,512,1024
"""
import argparse

from hrrfp.evaluation import ExperimentConfig, capacity_sweep, capacity_table


def _ints(s):
    return tuple(int(x) for x in s.split(","))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dims", type=_ints, default=(512, 1024))
    p.add_argument("--block-sizes", type=_ints, default=(2, 4, 8, 16))
    p.add_argument("--threshold", type=float, default=50.0)
    p.add_argument("--sigma", type=float)
    p.add_argument("--ladder", default="1.0,1.25,1.5,2.0")
    p.add_argument("--tracks", type=int, default=500)
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--queries", type=int, default=2000)
    p.add_argument("--index", choices=["exact", "ivfpq"], default="exact")
    p.add_argument("--seed", type=int, default=8)
    args = p.parse_args(argv)

    base = ExperimentConfig(tracks=args.tracks, distractors=args.distractors, queries=args.queries,
                            index=args.index, seed=args.seed)
    sigma = args.sigma
    if sigma is None:
        for sigma in (float(x) for x in args.ladder.split(",")):
            first = capacity_sweep(base, args.dims[:1], args.block_sizes, sigma, args.threshold)[args.dims[0]]
            if first["max_M"] is not None and first["max_M"] < max(args.block_sizes):
                break
    result = capacity_sweep(base, args.dims, args.block_sizes, sigma, args.threshold)
    print(capacity_table(result, args.threshold, sigma))


if __name__ == "__main__":
    main()
