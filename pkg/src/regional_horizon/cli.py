"""Command-line entry point.

Exit codes: 0 success, 1 a property check failed, 2 bad input.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path
from typing import Sequence

from . import bench, checks, filter as score_filter, perf
from .errors import BadConstraints, BadPolicy, EmptyDataset, HorizonError, SceneIdMismatch
from .horizon import build_horizon_mask, materialize_dense, to_pgm, visibility_stats
from .scene import SceneSpec, build_layout

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load_scene(path: str, pixel_size: Sequence[float] | None) -> SceneSpec:
    size = tuple(pixel_size) if pixel_size else None
    return SceneSpec.from_json(_read_text(path), pixel_size=size)


def cmd_mask_build(args: argparse.Namespace) -> int:
    spec = _load_scene(args.scene, args.pixel_size)
    layout = build_layout(spec)
    mask = build_horizon_mask(layout, spec)
    if args.out:
        Path(args.out).write_text(mask.to_json() + "\n")
    if args.pgm:
        Path(args.pgm).write_bytes(to_pgm(materialize_dense(mask, limit=args.dense_limit)))
    print(json.dumps(visibility_stats(mask)))
    return EXIT_OK


def cmd_attn_check(args: argparse.Namespace) -> int:
    spec = _load_scene(args.scene, args.pixel_size) if args.scene else checks.default_scene()
    report = checks.run_attn_check(spec, trials=args.trials, seed=args.seed, break_mask=args.break_mask)
    text = json.dumps(report.to_dict(), indent=1) + "\n"
    _emit(text, args.out)
    if args.out:
        print("PASS" if report.passed else f"FAIL: {', '.join(report.failures)}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_perf(args: argparse.Namespace) -> int:
    if args.cpu_pin and not perf.pin_cpu():
        warnings.warn("CPU pinning is not supported on this platform")
    lines = []
    for L in args.sizes:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rows = perf.time_paths(L, repeats=args.repeats, seed=args.seed, mem_budget_mb=args.mem_budget_mb)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        if rows:
            by = {r["path"]: r["wall_ns"] for r in rows}
            print(f"L={L}: dense {by['dense'] / 1e6:.1f} ms, sparse {by['sparse'] / 1e6:.1f} ms, "
                  f"speedup {by['dense'] / by['sparse']:.2f}x", file=sys.stderr)
        lines.extend(rows)
    _emit("".join(json.dumps(r) + "\n" for r in lines), args.out)
    return EXIT_OK


def _policy_from_args(args: argparse.Namespace) -> score_filter.SelectionPolicy:
    if args.top_k is not None:
        return score_filter.SelectionPolicy("top_k", args.top_k)
    if args.rank_threshold is not None:
        return score_filter.SelectionPolicy("rank_threshold", args.rank_threshold)
    if args.policy is not None:
        return score_filter.SelectionPolicy.parse(args.policy)
    fraction = args.top_fraction if args.top_fraction is not None else score_filter.DEFAULT_TOP_FRACTION
    return score_filter.SelectionPolicy("top_fraction", fraction)


def cmd_filter(args: argparse.Namespace) -> int:
    policy = _policy_from_args(args)
    records = score_filter.read_scores_jsonl(_read_text(args.scores).splitlines())
    ranked = score_filter.aggregate(records)
    kept = score_filter.select(ranked, policy)
    _emit(score_filter.ranked_jsonl(ranked, kept), args.out)
    print(f"kept {len(kept)} of {len(ranked)}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    size = tuple(args.pixel_size) if args.pixel_size else None
    gts = bench.read_gt_jsonl(_read_text(args.gt).splitlines(), size)
    dets = bench.read_det_jsonl(_read_text(args.det).splitlines(), size)
    report = bench.evaluate(gts, dets)
    _emit(json.dumps(report.to_dict(), indent=1) + "\n", args.out)
    table = report.to_text(args.method)
    if args.table:
        Path(args.table).write_text(table)
    print(table, end="", file=sys.stderr if args.out is None else sys.stdout)
    return EXIT_OK


def cmd_bench_gen(args: argparse.Namespace) -> int:
    c = bench.BenchConstraints(
        min_area=args.min_area,
        max_area=args.max_area,
        min_aspect=args.min_aspect,
        max_aspect=args.max_aspect,
        challenging_fraction=args.challenging_fraction,
    )
    records = bench.generate_bench(args.single, args.multi, seed=args.seed, constraints=c)
    bad = [(r.scene_id, p) for r in records for p in bench.validate_scene(r, c)]
    if bad:  # generator bug, not an input problem
        print(f"validator rejected {bad[0]}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    _emit(bench.records_jsonl(records), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regional-horizon", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def pixel_flag(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--pixel-size", type=float, nargs=2, metavar=("W", "H"),
                        help="boxes are given in pixels of a W x H image")

    sp = sub.add_parser("mask-build", help="build the horizon mask of a scene")
    sp.add_argument("scene")
    sp.add_argument("--out", help="block-structure JSON output")
    sp.add_argument("--pgm", help="dense mask image (P5)")
    sp.add_argument("--dense-limit", type=int, default=None, help="override HORIZON_DENSE_LIMIT")
    pixel_flag(sp)
    sp.set_defaults(func=cmd_mask_build)

    sp = sub.add_parser("attn-check", help="leakage / softmax / dense-vs-sparse checks")
    sp.add_argument("scene", nargs="?", help="scene JSON (default: built-in toy scene)")
    sp.add_argument("--trials", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--break-mask", action="store_true", help="run without the mask (negative control)")
    sp.add_argument("--out", help="report JSON (default stdout)")
    pixel_flag(sp)
    sp.set_defaults(func=cmd_attn_check)

    sp = sub.add_parser("perf", help="time dense vs block-sparse attention")
    sp.add_argument("--sizes", type=int, nargs="+", default=[1024, 2048, 4096])
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mem-budget-mb", type=float, default=2560.0)
    sp.add_argument("--cpu-pin", action="store_true", help="pin to one CPU (affects variance only)")
    sp.add_argument("--out", help="JSONL report (default stdout)")
    sp.set_defaults(func=cmd_perf)

    sp = sub.add_parser("filter", help="rank-aggregate pair scores and select")
    sp.add_argument("scores")
    pol = sp.add_mutually_exclusive_group()
    pol.add_argument("--top-k", type=int)
    pol.add_argument("--top-fraction", type=float)
    pol.add_argument("--rank-threshold", type=float)
    pol.add_argument("--policy", help="kind=value, e.g. top_fraction=0.245")
    sp.add_argument("--out", help="ranked JSONL (default stdout)")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("bench", help="IoU / mIoU / AP of detections against ground truth")
    sp.add_argument("gt")
    sp.add_argument("det")
    sp.add_argument("--out", help="report JSON (default stdout)")
    sp.add_argument("--table", help="also write the text table here")
    sp.add_argument("--method", default="ours", help="row label in the text table")
    pixel_flag(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("bench-gen", help="generate a synthetic benchmark")
    sp.add_argument("--single", type=int, default=252)
    sp.add_argument("--multi", type=int, default=296)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--min-area", type=float, default=0.04)
    sp.add_argument("--max-area", type=float, default=0.60)
    sp.add_argument("--min-aspect", type=float, default=1.0 / 3.0)
    sp.add_argument("--max-aspect", type=float, default=3.0)
    sp.add_argument("--challenging-fraction", type=float, default=0.30)
    sp.add_argument("--out", help="ground-truth JSONL (default stdout)")
    sp.set_defaults(func=cmd_bench_gen)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, HorizonError, ValueError, KeyError) as exc:
        kind = type(exc).__name__
        if isinstance(exc, (EmptyDataset, SceneIdMismatch, BadConstraints, BadPolicy)):
            print(f"error: {kind}: {exc}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
