"""Masked scaled-dot-product attention, dense and block-sparse, plus a toy DiT block.

Blocked keys are excluded from the softmax instead of receiving a literal
``-inf`` bias. In the dense kernel they get weight exactly 0; the sparse
kernel never gathers them at all.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllMaskedRow, BadDimension, ShapeMismatch
from .horizon import HorizonMask, materialize_dense
from .rope import PositionIds, apply_rotary
from .scene import SceneSpec, TokenLayout, build_layout


@dataclass(frozen=True)
class AttentionConfig:
    head_dim: int = 16
    num_heads: int = 4
    rope_base: float = 10000.0
    use_rope: bool = True
    mlp_ratio: int = 4

    def __post_init__(self) -> None:
        if self.head_dim < 4 or self.head_dim % 2:
            raise BadDimension(f"head_dim must be an even integer >= 4, got {self.head_dim}")
        if self.num_heads < 1:
            raise BadDimension("num_heads must be positive")

    @property
    def width(self) -> int:
        return self.head_dim * self.num_heads

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)


@dataclass(frozen=True, eq=False)
class TokenTensor:
    values: np.ndarray  # (L, width) float64
    layout: TokenLayout

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.layout.total_len:
            raise ShapeMismatch(f"token matrix {v.shape} does not match layout length {self.layout.total_len}")
        if not np.all(np.isfinite(v)):
            raise ValueError("token values must be finite")
        object.__setattr__(self, "values", v)

    def replace_rows(self, start: int, stop: int, rows: np.ndarray) -> "TokenTensor":
        v = self.values.copy()
        v[start:stop] = rows
        return TokenTensor(v, self.layout)


def synth_tokens(spec: SceneSpec, width: int) -> TokenTensor:
    """Seeded standard-normal rows standing in for text embeddings and VAE patches."""
    layout = build_layout(spec)
    rng = np.random.default_rng(spec.seed)
    return TokenTensor(rng.standard_normal((layout.total_len, width)), layout)


def _check_qkv(Q: np.ndarray, K: np.ndarray, V: np.ndarray, L: int) -> None:
    if Q.shape != K.shape or Q.shape[:-1] != V.shape[:-1]:
        raise ShapeMismatch(f"Q {Q.shape}, K {K.shape}, V {V.shape} are incompatible")
    if Q.ndim not in (2, 3):
        raise ShapeMismatch("expected per-head (L, d) or stacked (heads, L, d) arrays")
    if Q.shape[-2] != L:
        raise ShapeMismatch(f"sequence length {Q.shape[-2]} does not match mask length {L}")


def _dense_bool(mask: HorizonMask | np.ndarray) -> np.ndarray:
    if isinstance(mask, HorizonMask):
        return materialize_dense(mask)
    return np.asarray(mask, dtype=bool)


def _scale_for(Q: np.ndarray, cfg: AttentionConfig | None) -> float:
    return cfg.scale if cfg is not None else 1.0 / math.sqrt(Q.shape[-1])


def _softmax_visible(logits: np.ndarray, visible: np.ndarray | None) -> np.ndarray:
    if visible is not None:
        logits = np.where(visible, logits, -np.inf)
    row_max = logits.max(axis=-1, keepdims=True)
    w = np.exp(logits - row_max)
    w /= w.sum(axis=-1, keepdims=True)
    return w


def attention_weights_dense(
    Q: np.ndarray, K: np.ndarray, mask: HorizonMask | np.ndarray, cfg: AttentionConfig | None = None
) -> np.ndarray:
    """Row-stochastic weight matrix of the dense path (for inspection and tests)."""
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    M = _dense_bool(mask)
    _check_qkv(Q, K, K, M.shape[0])
    if not M.any(axis=-1).all():
        raise AllMaskedRow(f"query row {int(np.argmin(M.any(axis=-1)))} has no visible key")
    logits = (Q @ np.swapaxes(K, -1, -2)) * _scale_for(Q, cfg)
    return _softmax_visible(logits, M)


def masked_attention_dense(
    Q: np.ndarray,
    K: np.ndarray,
    V: np.ndarray,
    mask: HorizonMask | np.ndarray,
    cfg: AttentionConfig | None = None,
) -> np.ndarray:
    """Reference path: full L x L logits with blocked entries excluded.

    ``mask`` may be a HorizonMask or an already materialized boolean matrix.
    """
    V = np.asarray(V, dtype=np.float64)
    w = attention_weights_dense(Q, K, mask, cfg)
    if V.shape[:-1] != w.shape[:-1]:
        raise ShapeMismatch(f"V {V.shape} does not match weights {w.shape}")
    return w @ V


@dataclass(frozen=True)
class SparsePlan:
    """Query groups that share a key set; keys are listed in token order."""

    groups: tuple[tuple[np.ndarray, np.ndarray], ...]
    total_len: int

    @property
    def num_logits(self) -> int:
        return sum(len(q) * len(k) for q, k in self.groups)


def sparse_plan(mask: HorizonMask) -> SparsePlan:
    lay = mask.layout
    L = lay.total_len
    text, noise = lay.text, lay.noise
    vis = mask.ref_visibility
    groups: list[tuple[np.ndarray, np.ndarray]] = []
    base_keys = np.arange(0, noise.stop)  # text + noise

    if text.length:
        groups.append((np.arange(text.start, text.stop), np.arange(L)))

    if noise.length:
        if lay.num_refs == 0:
            groups.append((np.arange(noise.start, noise.stop), np.arange(L)))
        else:
            sigs, inverse = np.unique(vis.T, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            for g, sig in enumerate(sigs):
                q_idx = noise.start + np.flatnonzero(inverse == g)
                ref_keys = [np.arange(lay.refs[i].start, lay.refs[i].stop) for i in np.flatnonzero(sig)]
                groups.append((q_idx, np.concatenate([base_keys, *ref_keys])))

    for i, seg in enumerate(lay.refs):
        k_idx = np.concatenate(
            [np.arange(text.start, text.stop), noise.start + np.flatnonzero(vis[i]), np.arange(seg.start, seg.stop)]
        )
        groups.append((np.arange(seg.start, seg.stop), k_idx))
    return SparsePlan(tuple(groups), L)


def masked_attention_block_sparse(
    Q: np.ndarray,
    K: np.ndarray,
    V: np.ndarray,
    mask: HorizonMask,
    cfg: AttentionConfig | None = None,
    plan: SparsePlan | None = None,
) -> np.ndarray:
    """Same result as the dense path without an L x L mask.

    Fully blocked segment pairs are skipped; ref x noise visibility comes from
    the per-reference bitmaps. Pass a precomputed ``plan`` to reuse it across calls.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    _check_qkv(Q, K, V, mask.total_len)
    if plan is None:
        plan = sparse_plan(mask)
    scale = _scale_for(Q, cfg)
    out = np.empty(Q.shape[:-1] + V.shape[-1:], dtype=np.float64)
    for q_idx, k_idx in plan.groups:
        if len(k_idx) == 0:
            raise AllMaskedRow(f"query rows starting at {int(q_idx[0])} have no visible key")
        q = Q[..., q_idx, :]
        k = K[..., k_idx, :]
        logits = (q @ np.swapaxes(k, -1, -2)) * scale
        out[..., q_idx, :] = _softmax_visible(logits, None) @ V[..., k_idx, :]
    return out


def unmasked_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray, cfg: AttentionConfig | None = None) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    logits = (Q @ np.swapaxes(np.asarray(K, dtype=np.float64), -1, -2)) * _scale_for(Q, cfg)
    return _softmax_visible(logits, None) @ np.asarray(V, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class BlockParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


def init_block_params(cfg: AttentionConfig, seed: int, zero: bool = False) -> BlockParams:
    width, hidden = cfg.width, cfg.width * cfg.mlp_ratio
    if zero:
        z = np.zeros
        return BlockParams(z((width, width)), z((width, width)), z((width, width)), z((width, width)),
                           z((width, hidden)), z((hidden, width)))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    s_in, s_hid = 1.0 / math.sqrt(width), 1.0 / math.sqrt(hidden)
    return BlockParams(
        wq=rng.normal(0.0, s_in, (width, width)),
        wk=rng.normal(0.0, s_in, (width, width)),
        wv=rng.normal(0.0, s_in, (width, width)),
        wo=rng.normal(0.0, s_in, (width, width)),
        w1=rng.normal(0.0, s_in, (width, hidden)),
        w2=rng.normal(0.0, s_hid, (hidden, width)),
    )


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))



def double_stream_forward(
    tokens: TokenTensor,
    mask: HorizonMask | None,
    ids: PositionIds,
    params_seed: int = 0,
    cfg: AttentionConfig | None = None,
    params: BlockParams | None = None,
    kernel: str = "sparse",
) -> TokenTensor:
    """One joint text/image block: QKV, rotary, masked attention, out-proj, residual MLP.

    ``mask=None`` runs plain full attention (the no-horizon baseline).
    """
    cfg = cfg or AttentionConfig()
    x = tokens.values
    L, width = x.shape
    if width != cfg.width:
        raise ShapeMismatch(f"token width {width} != model width {cfg.width}")
    if len(ids) != L or (mask is not None and mask.total_len != L):
        raise ShapeMismatch("tokens, mask and position ids disagree on sequence length")
    p = params if params is not None else init_block_params(cfg, params_seed)

    H, d = cfg.num_heads, cfg.head_dim
    q = (x @ p.wq).reshape(L, H, d)
    k = (x @ p.wk).reshape(L, H, d)
    v = (x @ p.wv).reshape(L, H, d)
    if cfg.use_rope:
        q = apply_rotary(q, ids, cfg.rope_base)
        k = apply_rotary(k, ids, cfg.rope_base)
    q, k, v = (np.ascontiguousarray(t.transpose(1, 0, 2)) for t in (q, k, v))

    if mask is None:
        a = unmasked_attention(q, k, v, cfg)
    elif kernel == "dense":
        a = masked_attention_dense(q, k, v, mask, cfg)
    elif kernel == "sparse":
        a = masked_attention_block_sparse(q, k, v, mask, cfg)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")

    h = x + a.transpose(1, 0, 2).reshape(L, width) @ p.wo
    out = h + gelu(h @ p.w1) @ p.w2
    return TokenTensor(out, tokens.layout)
