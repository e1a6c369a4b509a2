"""2-D position ids with diagonal reference offsets, and axial rotary rotation.

Noise patch (r, c) keeps id (r, c). Reference grids are pushed past the
noise grid along the diagonal, one after another, so no two image tokens
from different grids share an id. Text tokens all sit at (0, 0).
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import BadDimension, InvalidSpec, ShapeMismatch
from .scene import SceneSpec, TokenLayout


@dataclass(frozen=True, eq=False)
class PositionIds:
    rows: np.ndarray  # (L,) int64
    cols: np.ndarray  # (L,) int64

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64).copy()
        cols = np.asarray(self.cols, dtype=np.int64).copy()
        if rows.shape != cols.shape or rows.ndim != 1:
            raise ShapeMismatch("row and column ids must be 1-D arrays of equal length")
        rows.setflags(write=False)
        cols.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def zeros(cls, length: int) -> "PositionIds":
        z = np.zeros(length, dtype=np.int64)
        return cls(z, z)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("token_index,row_id,col_id\n")
        for i, (r, c) in enumerate(zip(self.rows.tolist(), self.cols.tolist())):
            buf.write(f"{i},{r},{c}\n")
        return buf.getvalue()


def reference_offsets(spec: SceneSpec) -> list[tuple[int, int]]:
    """Top-left id of each reference grid: cumulative along the diagonal."""
    off_h, off_w = spec.noise_h, spec.noise_w
    out = []
    for r in spec.refs:
        out.append((off_h, off_w))
        off_h += r.grid_h
        off_w += r.grid_w
    return out


def assign_position_ids(layout: TokenLayout, spec: SceneSpec) -> PositionIds:
    if layout.ref_grids != tuple((r.grid_h, r.grid_w) for r in spec.refs) or layout.noise_h != spec.noise_h:
        raise InvalidSpec("layout was not derived from this scene")
    L = layout.total_len
    rows = np.zeros(L, dtype=np.int64)
    cols = np.zeros(L, dtype=np.int64)

    def place(start: int, h: int, w: int, off_h: int, off_w: int) -> None:
        rr, cc = np.divmod(np.arange(h * w), w)
        rows[start:start + h * w] = rr + off_h
        cols[start:start + h * w] = cc + off_w

    place(layout.noise.start, spec.noise_h, spec.noise_w, 0, 0)
    for seg, ref, (oh, ow) in zip(layout.refs, spec.refs, reference_offsets(spec)):
        place(seg.start, ref.grid_h, ref.grid_w, oh, ow)
    return PositionIds(rows, cols)


def _angles(pos: np.ndarray, half: int, base: float) -> np.ndarray:
    inv_freq = 1.0 / (base ** (np.arange(0, half, 2, dtype=np.float64) / half))
    return pos.astype(np.float64)[:, None] * inv_freq[None, :]


def _rotate_pairs(x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    # x: (L, ..., 2m) with adjacent (even, odd) pairs; theta: (L, m)
    extra = x.ndim - 2
    theta = theta.reshape(theta.shape[:1] + (1,) * extra + theta.shape[1:])
    cos, sin = np.cos(theta), np.sin(theta)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def apply_rotary(qk: np.ndarray, ids: PositionIds, base: float = 10000.0) -> np.ndarray:
    """Rotate per-token vectors: first half of the head dim by row id, second by col id.

    ``qk`` is (L, d) or (L, heads, d) with d divisible by 4.
    """
    qk = np.asarray(qk, dtype=np.float64)
    if qk.ndim not in (2, 3):
        raise BadDimension(f"expected (L, d) or (L, heads, d), got shape {qk.shape}")
    d = qk.shape[-1]
    if d < 4 or d % 4:
        raise BadDimension(f"head dim must be a positive multiple of 4, got {d}")
    if qk.shape[0] != len(ids):
        raise ShapeMismatch(f"{qk.shape[0]} vectors but {len(ids)} position ids")
    half = d // 2
    out = np.empty_like(qk)
    out[..., :half] = _rotate_pairs(qk[..., :half], _angles(ids.rows, half, base))
    out[..., half:] = _rotate_pairs(qk[..., half:], _angles(ids.cols, half, base))
    return out
