"""Property checks on the masked attention stack, used by ``attn-check`` and the tests."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .attn import (
    AttentionConfig,
    attention_weights_dense,
    double_stream_forward,
    init_block_params,
    masked_attention_block_sparse,
    masked_attention_dense,
    synth_tokens,
)
from .horizon import HorizonMask, build_horizon_mask, materialize_dense
from .rope import PositionIds, assign_position_ids
from .scene import BoundingBox, ReferenceSpec, SceneSpec, build_layout

LEAK_TOL = 1e-12
EQUIV_RTOL = 1e-6
ROWSUM_TOL = 1e-6


def default_scene() -> SceneSpec:
    """Small two-subject scene with overlapping boxes."""
    return SceneSpec(
        text_len=8,
        noise_h=8,
        noise_w=8,
        refs=(
            ReferenceSpec(4, 4, BoundingBox(0.0, 0.0, 0.5, 0.5), "dog"),
            ReferenceSpec(3, 3, BoundingBox(0.375, 0.375, 1.0, 0.875), "cat"),
        ),
        seed=0,
    )


def random_box(rng: np.random.Generator) -> BoundingBox:
    while True:
        x = np.sort(rng.uniform(0.0, 1.0, 2))
        y = np.sort(rng.uniform(0.0, 1.0, 2))
        if rng.random() < 0.3:
            # snap to a coarse lattice so edge-touching cases show up
            x, y = np.round(x * 8) / 8, np.round(y * 8) / 8
        if x[0] < x[1] and y[0] < y[1]:
            return BoundingBox(float(x[0]), float(y[0]), float(x[1]), float(y[1]))


def random_scene(
    rng: np.random.Generator,
    max_noise: int = 8,
    max_refs: int = 3,
    max_text: int = 16,
    max_ref_grid: int = 4,
) -> SceneSpec:
    refs = tuple(
        ReferenceSpec(int(rng.integers(1, max_ref_grid + 1)), int(rng.integers(1, max_ref_grid + 1)), random_box(rng))
        for _ in range(int(rng.integers(0, max_refs + 1)))
    )
    return SceneSpec(
        text_len=int(rng.integers(0, max_text + 1)),
        noise_h=int(rng.integers(1, max_noise + 1)),
        noise_w=int(rng.integers(1, max_noise + 1)),
        refs=refs,
        seed=int(rng.integers(0, 2**63)),
    )


def max_relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """Largest |a - e| / max(|a|, |e|) over elements (0/0 counts as 0)."""
    diff = np.abs(actual - expected)
    denom = np.maximum(np.abs(actual), np.abs(expected))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(diff == 0, 0.0, diff / denom)
    return float(rel.max()) if rel.size else 0.0


def blocked_rows(mask: HorizonMask, ref: int) -> np.ndarray:
    """Token indices whose horizon excludes every token of reference ``ref``."""
    lay = mask.layout
    rows = [lay.noise.start + np.flatnonzero(~mask.ref_visibility[ref])]
    rows += [np.arange(s.start, s.stop) for j, s in enumerate(lay.refs) if j != ref]
    return np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)


@dataclass
class LeakageResult:
    max_deviation: float
    checked_rows: int
    counterexample: dict[str, Any] | None = None


def leakage_probe(
    spec: SceneSpec,
    ref: int,
    rng: np.random.Generator,
    cfg: AttentionConfig | None = None,
    params_seed: int = 0,
    kernel: str = "sparse",
    break_mask: bool = False,
) -> LeakageResult:
    """Replace reference ``ref``'s token rows and measure the change on rows blocked from it.

    With ``break_mask`` the forward passes run without the horizon mask
    while the blocked rows still come from the true mask (negative control).
    """
    cfg = cfg or AttentionConfig()
    layout = build_layout(spec)
    mask = build_horizon_mask(layout, spec)
    ids = assign_position_ids(layout, spec) if cfg.use_rope else PositionIds.zeros(layout.total_len)
    params = init_block_params(cfg, params_seed)
    tokens = synth_tokens(spec, cfg.width)
    seg = layout.refs[ref]
    perturbed = tokens.replace_rows(seg.start, seg.stop, rng.standard_normal((seg.length, cfg.width)))
    run_mask = None if break_mask else mask
    base = double_stream_forward(tokens, run_mask, ids, cfg=cfg, params=params, kernel=kernel).values
    alt = double_stream_forward(perturbed, run_mask, ids, cfg=cfg, params=params, kernel=kernel).values
    rows = blocked_rows(mask, ref)
    if len(rows) == 0:
        return LeakageResult(0.0, 0)
    dev = np.abs(base[rows] - alt[rows]).max(axis=1)
    worst = int(np.argmax(dev))
    result = LeakageResult(float(dev[worst]), len(rows))
    if dev[worst] > LEAK_TOL:
        result.counterexample = {
            "scene": spec.to_dict(),
            "ref": ref,
            "token": int(rows[worst]),
            "deviation": float(dev[worst]),
            "kernel": kernel,
        }
    return result


def random_qkv(rng: np.random.Generator, L: int, d: int, heads: int | None = None, logit_range: float | None = None):
    shape = (L, d) if heads is None else (heads, L, d)
    Q, K, V = (rng.standard_normal(shape) for _ in range(3))
    if logit_range is not None:
        Q = Q * logit_range / np.sqrt(d)
    return Q, K, V


@dataclass
class AttnCheckReport:
    scene: dict[str, Any]
    trials: int
    seed: int
    max_leakage: float = 0.0
    leakage_rows_checked: int = 0
    max_rowsum_error: float = 0.0
    masked_weight_max: float = 0.0
    nonfinite: int = 0
    max_dense_sparse_rel_error: float = 0.0
    failures: list[str] = field(default_factory=list)
    counterexample: dict[str, Any] | None = None

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "scene": self.scene,
            "trials": self.trials,
            "seed": self.seed,
            "max_leakage": self.max_leakage,
            "leakage_rows_checked": self.leakage_rows_checked,
            "max_rowsum_error": self.max_rowsum_error,
            "masked_weight_max": self.masked_weight_max,
            "nonfinite": self.nonfinite,
            "max_dense_sparse_rel_error": self.max_dense_sparse_rel_error,
            "tolerances": {"leakage": LEAK_TOL, "rowsum": ROWSUM_TOL, "dense_sparse_rel": EQUIV_RTOL},
            "failures": self.failures,
            "counterexample": self.counterexample,
        }


def run_attn_check(
    spec: SceneSpec, trials: int = 3, seed: int = 0, break_mask: bool = False, cfg: AttentionConfig | None = None
) -> AttnCheckReport:
    """Leakage, softmax-contract and dense/sparse equivalence suites on one scene."""
    cfg = cfg or AttentionConfig()
    rng = np.random.default_rng(seed)
    layout = build_layout(spec)
    mask = build_horizon_mask(layout, spec)
    dense = materialize_dense(mask)
    rep = AttnCheckReport(scene=spec.to_dict(), trials=trials, seed=seed)

    def fail(name: str, example: dict[str, Any] | None) -> None:
        if name not in rep.failures:
            rep.failures.append(name)
        if rep.counterexample is None and example is not None:
            rep.counterexample = example

    for t in range(trials):
        for i in range(layout.num_refs):
            res = leakage_probe(spec, i, rng, cfg, params_seed=seed + t, break_mask=break_mask)
            rep.leakage_rows_checked += res.checked_rows
            rep.max_leakage = max(rep.max_leakage, res.max_deviation)
            if res.counterexample is not None:
                fail("leakage", {"check": "leakage", "trial": t, **res.counterexample})

        Q, K, V = random_qkv(rng, layout.total_len, cfg.head_dim, heads=cfg.num_heads)
        run_mask = np.ones_like(dense) if break_mask else dense
        w = attention_weights_dense(Q, K, run_mask, cfg)
        rep.nonfinite += int((~np.isfinite(w)).sum())
        masked = float(np.abs(w[..., ~dense]).max()) if (~dense).any() else 0.0
        rowsum = float(np.abs(w.sum(axis=-1) - 1.0).max())
        rep.masked_weight_max = max(rep.masked_weight_max, masked)
        rep.max_rowsum_error = max(rep.max_rowsum_error, rowsum)
        if masked != 0.0 or rowsum > ROWSUM_TOL or rep.nonfinite:
            fail("softmax", {"check": "softmax", "trial": t, "masked_weight_max": masked, "rowsum_error": rowsum})

        out_dense = masked_attention_dense(Q, K, V, run_mask, cfg)
        out_sparse = masked_attention_block_sparse(Q, K, V, mask, cfg)
        rel = max_relative_error(out_sparse, out_dense)
        rep.max_dense_sparse_rel_error = max(rep.max_dense_sparse_rel_error, rel)
        if rel > EQUIV_RTOL:
            fail("dense_sparse", {"check": "dense_sparse", "trial": t, "rel_error": rel})
    return rep
