"""Dense vs block-sparse masked attention over a range of sequence lengths.

    python scripts/perf_sweep.py --sizes 512 1024 2048 4096 --repeats 3
"""
import argparse

from regional_horizon.perf import time_paths


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[512, 1024, 2048, 4096])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'L':>6} {'visible':>8} {'dense ms':>10} {'sparse ms':>10} {'speedup':>8}")
    for L in args.sizes:
        rows = time_paths(L, repeats=args.repeats, seed=args.seed)
        if not rows:
            continue
        by = {r["path"]: r for r in rows}
        d, s = by["dense"]["wall_ns"] / 1e6, by["sparse"]["wall_ns"] / 1e6
        print(f"{L:>6} {by['dense']['ones_fraction']:>8.3f} {d:>10.1f} {s:>10.1f} {d / s:>7.2f}x")


if __name__ == "__main__":
    main()
