"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import time
from pathlib import Path

import numpy as np

from oracles import brute_force_ap, naive_aggregate_order, naive_mask
from regional_horizon.attn import AttentionConfig, attention_weights_dense, masked_attention_block_sparse, masked_attention_dense
from regional_horizon.bench import (
    AP_THRESHOLDS,
    BenchConstraints,
    compute_ap,
    evaluate,
    generate_bench,
    gt_as_detections,
    iou,
    match_scene,
    ranked_detections,
    read_det_jsonl,
    read_gt_jsonl,
    records_jsonl,
    validate_scene,
)
from regional_horizon.checks import leakage_probe, max_relative_error, random_qkv, random_scene
from regional_horizon.cli import main
from regional_horizon.filter import ScoreRecord, SelectionPolicy, aggregate, read_scores_jsonl, select
from regional_horizon.horizon import mask_for_scene, materialize_dense, visibility_stats
from regional_horizon.perf import perf_scene, time_paths
from regional_horizon.rope import PositionIds, apply_rotary, assign_position_ids
from regional_horizon.scene import BoundingBox, build_layout
from strategies import random_dataset

DATA = Path(__file__).parent / "data"


def test_c01_mask_oracle_equivalence(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        spec = random_scene(rng, max_noise=8, max_refs=3, max_text=16)
        if not np.array_equal(materialize_dense(mask_for_scene(spec)), naive_mask(spec)):
            mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 10
    assert criterion("1 mask oracle equivalence", ok, f"{mismatches} mismatches in 1000 scenes, {elapsed:.2f}s")


def test_c02_zero_leakage(criterion):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst, scenes, probes = 0.0, 0, 0
    while scenes < 200:
        spec = random_scene(rng)
        if not spec.refs:
            continue
        scenes += 1
        for ref in range(len(spec.refs)):
            res = leakage_probe(spec, ref, rng, params_seed=scenes)
            worst = max(worst, res.max_deviation)
            probes += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 60
    assert criterion("2 zero leakage", ok, f"max deviation {worst:.3g} over {probes} probes, {elapsed:.1f}s")


def test_c03_dense_sparse_equivalence(criterion):
    rng = np.random.default_rng(3)
    cfg = AttentionConfig()
    start = time.perf_counter()
    worst, longest, done = 0.0, 0, 0
    while done < 1000:
        spec = random_scene(rng, max_noise=28, max_refs=3, max_text=64, max_ref_grid=10)
        L = spec.total_len
        if L > 1024:
            continue
        done += 1
        longest = max(longest, L)
        mask = mask_for_scene(spec)
        Q, K, V = random_qkv(rng, L, cfg.head_dim, heads=cfg.num_heads)
        dense = masked_attention_dense(Q, K, V, mask, cfg)
        sparse = masked_attention_block_sparse(Q, K, V, mask, cfg)
        worst = max(worst, max_relative_error(sparse, dense))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 120
    assert criterion("3 dense/sparse equivalence", ok,
                     f"max rel err {worst:.3g}, L up to {longest}, {elapsed:.1f}s")


def _extreme_qk(rng, L, d):
    """Unit keys and queries of norm 50 or random, so raw logits reach +-50."""
    K = rng.standard_normal((L, d))
    K /= np.linalg.norm(K, axis=1, keepdims=True)
    Q = rng.standard_normal((L, d))
    big = rng.random(L) < 0.5
    Q[big] = 50.0 * K[rng.integers(0, L, big.sum())] * rng.choice([-1.0, 1.0], (big.sum(), 1))
    return Q, K


def test_c04_softmax_contract(criterion):
    rng = np.random.default_rng(4)
    cfg = AttentionConfig(head_dim=8, num_heads=1)
    rows = blocked_nonzero = bad = 0
    worst_sum = 0.0
    extreme = 0.0
    while rows < 10_000:
        spec = random_scene(rng)
        mask = mask_for_scene(spec)
        M = materialize_dense(mask)
        Q, K = _extreme_qk(rng, mask.total_len, cfg.head_dim)
        extreme = max(extreme, float(np.abs(Q @ K.T).max()))
        w = attention_weights_dense(Q, K, mask, cfg)
        blocked_nonzero += int((w[~M] != 0).sum())
        bad += int((~np.isfinite(w)).sum())
        worst_sum = max(worst_sum, float(np.abs(w.sum(axis=1) - 1).max()))
        rows += mask.total_len
    ok = blocked_nonzero == 0 and bad == 0 and worst_sum <= 1e-6 and extreme >= 49.999
    assert criterion("4 softmax contract", ok,
                     f"{rows} rows, max |rowsum-1| {worst_sum:.2g}, nonzero blocked {blocked_nonzero}, "
                     f"non-finite {bad}, max |raw logit| {extreme:.1f}")


def test_c05_no_extra_inference_cost(criterion):
    L = 4096
    mask = mask_for_scene(perf_scene(L))
    lay = mask.layout
    coverage = [c / lay.noise.length for c in visibility_stats(mask)["per_ref_patch_counts"]]
    rows = time_paths(L, repeats=3)
    by = {r["path"]: r["wall_ns"] for r in rows}
    ratio = by["dense"] / by["sparse"]
    ok = len(coverage) == 2 and max(coverage) <= 0.25 and by["sparse"] <= by["dense"]
    assert criterion("5 no extra inference cost", ok,
                     f"L={L}, box coverage {coverage[0]:.3f}/{coverage[1]:.3f}, dense {by['dense'] / 1e6:.0f} ms, "
                     f"sparse {by['sparse'] / 1e6:.0f} ms, speedup {ratio:.2f}x (target 1.5x, informational)")


def test_c06_positional_non_overlap(criterion):
    rng = np.random.default_rng(6)
    overlaps = 0
    for _ in range(500):
        spec = random_scene(rng)
        lay = build_layout(spec)
        ids = assign_position_ids(lay, spec)
        sets = [set(zip(ids.rows[s.start:s.stop].tolist(), ids.cols[s.start:s.stop].tolist()))
                for s in (lay.noise, *lay.refs)]
        overlaps += sum(bool(sets[i] & sets[j]) for i in range(len(sets)) for j in range(i + 1, len(sets)))

    d = 16
    q, k = rng.standard_normal((1000, d)), rng.standard_normal((1000, d))
    pq = rng.integers(0, 500, (1000, 2))
    pk = rng.integers(0, 500, (1000, 2))
    shift = rng.integers(-200, 200, (1000, 2))
    shift = np.maximum(shift, -np.minimum(pq, pk))  # keep ids non-negative

    def rot(x, p):
        return apply_rotary(x, PositionIds(p[:, 0], p[:, 1]))

    rq, rk = rot(q, pq), rot(k, pk)
    norm_err = float(np.abs(np.linalg.norm(rq, axis=1) / np.linalg.norm(q, axis=1) - 1).max())
    base = (rq * rk).sum(axis=1)
    moved = (rot(q, pq + shift) * rot(k, pk + shift)).sum(axis=1)
    shift_err = float((np.abs(moved - base) / np.maximum(1.0, np.abs(base))).max())
    ok = overlaps == 0 and norm_err <= 1e-6 and shift_err <= 1e-9
    assert criterion("6 positional non-overlap", ok,
                     f"{overlaps} overlapping grid pairs in 500 scenes, norm err {norm_err:.2g}, "
                     f"shift err {shift_err:.2g} on 1000 pairs")


def test_c07_filter_oracle(criterion):
    rng = np.random.default_rng(7)
    n = 10_000
    clip = np.round(rng.uniform(-1, 1, n), 3)
    dino = np.round(rng.uniform(-1, 1, n), 3)
    vlm = rng.integers(0, 11, n).astype(float)
    ds = np.round(rng.normal(size=n), 2)
    records = [ScoreRecord(f"pair_{i:05d}", float(clip[i]), float(dino[i]), float(vlm[i]), float(ds[i]))
               for i in rng.permutation(n)]
    ranked = aggregate(records)
    order_ok = [r.pair_id for r in ranked] == naive_aggregate_order(records)
    target = n * (n + 1) / 2
    sums_ok = all(sum(getattr(r, f) for r in ranked) == target for f in ("r_v", "r_vlm", "r_ds"))
    fixture = read_scores_jsonl((DATA / "scores_400.jsonl").read_text().splitlines())
    kept = len(select(aggregate(fixture), SelectionPolicy("top_fraction", 0.245)))
    ok = order_ok and sums_ok and kept == 98
    assert criterion("7 filter oracle", ok,
                     f"order match {order_ok}, rank-sum identity {sums_ok}, fixture kept {kept}/400")


def test_c08_metric_oracle(criterion):
    iou_err = abs(iou(BoundingBox(0, 0, 0.5, 0.5), BoundingBox(0.25, 0.25, 0.75, 0.75)) - 1 / 7)
    analytic = (iou(BoundingBox(0, 0, 0.5, 0.5), BoundingBox(0, 0, 0.5, 0.5)) == 1.0
                and iou(BoundingBox(0, 0, 0.5, 0.5), BoundingBox(0.5, 0.5, 1, 1)) == 0.0)

    rng = np.random.default_rng(8)
    ap_err = 0.0
    for _ in range(100):
        gts, dets = random_dataset(rng, max_dets=20)
        ms = [match_scene(g, d) for g, d in zip(gts, dets)]
        n_gt = sum(len(g.subjects) for g in gts)
        ranked = ranked_detections(ms)
        per_t = {t: brute_force_ap(ranked, n_gt, t) for t in AP_THRESHOLDS}
        got = compute_ap(ms)
        ap_err = max(ap_err, abs(got["ap"] - sum(per_t.values()) / len(per_t)),
                     abs(got["ap50"] - per_t[0.5]), abs(got["ap70"] - per_t[0.7]))

    gt = read_gt_jsonl((DATA / "hand_gt.jsonl").read_text().splitlines())
    det = read_det_jsonl((DATA / "hand_det.jsonl").read_text().splitlines())
    hand = evaluate(gt, det)
    hand_ok = hand.ap50 == 1.0 and hand.ap70 == 0.5

    gen = generate_bench(20, 20, seed=8)
    selfrep = evaluate(gen, gt_as_detections(gen))
    self_ok = all(v == 1.0 for v in (selfrep.iou_mean, selfrep.miou, selfrep.ap, selfrep.ap50, selfrep.ap70))

    ok = iou_err <= 1e-9 and analytic and ap_err <= 1e-9 and hand_ok and self_ok
    assert criterion("8 metric oracle", ok,
                     f"1/7 err {iou_err:.2g}, AP vs brute force {ap_err:.2g}, hand ap50/ap70 "
                     f"{hand.ap50}/{hand.ap70}, self-detection all 1.0 {self_ok}")


def test_c09_benchmark_generator(criterion, tmp_path, capsys):
    c = BenchConstraints()
    recs = generate_bench()
    single = sum(len(r.subjects) == 1 for r in recs)
    multi = sum(len(r.subjects) > 1 for r in recs)
    invalid = sum(bool(validate_scene(r, c)) for r in recs)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    codes = (main(["bench-gen", "--out", str(a)]), main(["bench-gen", "--out", str(b)]))
    capsys.readouterr()
    same = a.read_bytes() == b.read_bytes() == records_jsonl(recs).encode()
    ok = (single, multi, invalid) == (252, 296, 0) and codes == (0, 0) and same
    assert criterion("9 benchmark generator", ok,
                     f"{single} single + {multi} multi, {invalid} invalid, byte-identical {same}")


def _cli_outputs(argv, workdir, capsys):
    """Run one subcommand; return exit code, stdout, stderr and any files it wrote."""
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    files = {p.name: p.read_bytes() for p in sorted(workdir.iterdir())}
    for p in workdir.iterdir():
        p.unlink()
    return code, out, err, files


def test_c10_cli_determinism(criterion, tmp_path, capsys):
    w = tmp_path
    scene = DATA / "scene_centered.json"
    commands = {
        "mask-build": ["mask-build", scene, "--out", w / "mask.json", "--pgm", w / "mask.pgm"],
        "attn-check": ["attn-check", scene, "--trials", "2"],
        "attn-check --break-mask": ["attn-check", "--trials", "1", "--break-mask"],
        "filter": ["filter", DATA / "scores_400.jsonl", "--out", w / "ranked.jsonl"],
        "bench": ["bench", DATA / "hand_gt.jsonl", DATA / "hand_det.jsonl", "--table", w / "table.txt"],
        "bench-gen": ["bench-gen", "--out", w / "gt.jsonl"],
    }
    differing = []
    for name, argv in commands.items():
        first = _cli_outputs(argv, w, capsys)
        second = _cli_outputs(argv, w, capsys)
        if first != second or not (first[1] or first[3]):
            differing.append(name)
    ok = not differing
    assert criterion("10 CLI determinism", ok,
                     f"{len(commands) - len(differing)}/{len(commands)} subcommand runs byte-identical"
                     + (f", differing: {differing}" if differing else ""))
