"""Wall-time comparison of the dense and block-sparse attention paths."""
from __future__ import annotations

import math
import os
import time
import warnings
from typing import Any

import numpy as np

from .attn import AttentionConfig, masked_attention_block_sparse, masked_attention_dense
from .horizon import build_horizon_mask, materialize_dense, visibility_stats
from .scene import BoundingBox, ReferenceSpec, SceneSpec, build_layout

# bytes per L^2 entry of the dense path: logits, masked logits, weights, bool mask
DENSE_BYTES_PER_ENTRY = 3 * 8 + 1


def perf_scene(L: int, seed: int = 0) -> SceneSpec:
    """Scene with exactly ``L`` tokens: ~1/16 text, ~9/16 of the rest noise, two equal refs.

    The two boxes sit in opposite corners and each covers under a quarter of the canvas.
    """
    if L < 16:
        raise ValueError("perf scenes need at least 16 tokens")
    rest = L - L // 16
    side = max(1, math.isqrt(rest * 9 // 16))
    per_ref = (rest - side * side) // 2
    gh = max(1, math.isqrt(per_ref))
    gw = max(1, per_ref // gh)
    text = L - side * side - 2 * gh * gw
    refs = (
        ReferenceSpec(gh, gw, BoundingBox(0.05, 0.05, 0.5, 0.5), "subject_a"),
        ReferenceSpec(gh, gw, BoundingBox(0.5, 0.5, 0.95, 0.95), "subject_b"),
    )
    return SceneSpec(text_len=text, noise_h=side, noise_w=side, refs=refs, seed=seed)


def pin_cpu() -> bool:
    """Pin this process to one CPU. Affects timing variance only, never results."""
    if not hasattr(os, "sched_setaffinity"):
        return False
    cpus = sorted(os.sched_getaffinity(0))
    os.sched_setaffinity(0, {cpus[0]})
    return True


def _best_ns(fn, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return int(best)


def time_paths(
    L: int,
    repeats: int = 3,
    seed: int = 0,
    cfg: AttentionConfig | None = None,
    mem_budget_mb: float = 2560.0,
) -> list[dict[str, Any]]:
    """Best-of-``repeats`` wall time per path over all heads, as report lines.

    The dense mask is materialized once outside the timed region; the sparse
    path rebuilds its plan inside every timed call.
    """
    cfg = cfg or AttentionConfig()
    if L * L * DENSE_BYTES_PER_ENTRY > mem_budget_mb * 2**20:
        warnings.warn(f"skipping L={L}: dense path exceeds the {mem_budget_mb:.0f} MB budget", stacklevel=2)
        return []
    spec = perf_scene(L, seed)
    mask = build_horizon_mask(build_layout(spec), spec)
    stats = visibility_stats(mask)
    rng = np.random.default_rng(seed)
    Q, K, V = (rng.standard_normal((cfg.num_heads, L, cfg.head_dim)) for _ in range(3))
    dense = materialize_dense(mask)

    def run_dense() -> None:
        for h in range(cfg.num_heads):
            masked_attention_dense(Q[h], K[h], V[h], dense, cfg)

    def run_sparse() -> None:
        masked_attention_block_sparse(Q, K, V, mask, cfg)

    lines = []
    for path, fn in (("dense", run_dense), ("sparse", run_sparse)):
        lines.append({"path": path, "L": L, "ones_fraction": stats["ones_fraction"], "wall_ns": _best_ns(fn, repeats)})
    return lines
