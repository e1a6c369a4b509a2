"""Block-structured attention horizon mask.

Visibility rules over segment pairs (symmetric):

    text  x anything   -> visible
    noise x noise      -> visible
    ref i x ref i      -> visible
    ref i x ref j      -> blocked (i != j)
    ref i x noise n    -> visible iff patch n overlaps box i

Only the per-reference bitmaps over noise patches are stored, so a mask
costs O(L + N * noise_patches) memory. ``materialize_dense`` expands it to
an L x L boolean matrix for verification and for the dense kernel.
"""
from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DenseTooLarge, InvalidSpec
from .scene import REF, BoundingBox, Rect, ReferenceSpec, SceneSpec, Segment, TokenLayout, build_layout

DEFAULT_DENSE_LIMIT = 8192


def dense_limit() -> int:
    """Dense materialization cap; ``HORIZON_DENSE_LIMIT`` overrides the default."""
    raw = os.environ.get("HORIZON_DENSE_LIMIT")
    if raw is None or raw.strip() == "":
        return DEFAULT_DENSE_LIMIT
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"HORIZON_DENSE_LIMIT must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValueError("HORIZON_DENSE_LIMIT must be positive")
    return value


def patch_in_box(cell: Rect, box: BoundingBox) -> bool:
    """True iff the cell and the box overlap with positive area.

    Touching along an edge or at a corner does not count.
    """
    dx = min(cell.x1, box.x_max) - max(cell.x0, box.x_min)
    dy = min(cell.y1, box.y_max) - max(cell.y0, box.y_min)
    return dx > 0 and dy > 0


def box_bitmap(noise_h: int, noise_w: int, box: BoundingBox) -> np.ndarray:
    """Vectorized ``patch_in_box`` over every cell of a noise grid, row-major."""
    c = np.arange(noise_w)
    r = np.arange(noise_h)
    x0, x1 = c / noise_w, (c + 1) / noise_w
    y0, y1 = r / noise_h, (r + 1) / noise_h
    col_hit = (np.minimum(x1, box.x_max) - np.maximum(x0, box.x_min)) > 0
    row_hit = (np.minimum(y1, box.y_max) - np.maximum(y0, box.y_min)) > 0
    return (row_hit[:, None] & col_hit[None, :]).reshape(-1)


@dataclass(frozen=True, eq=False)
class HorizonMask:
    layout: TokenLayout
    ref_visibility: np.ndarray  # (N, noise_h * noise_w) bool

    def __post_init__(self) -> None:
        vis = np.asarray(self.ref_visibility, dtype=bool)
        if vis.shape != (self.layout.num_refs, self.layout.num_noise):
            raise InvalidSpec(
                f"ref_visibility shape {vis.shape} does not match "
                f"({self.layout.num_refs}, {self.layout.num_noise})"
            )
        vis = vis.copy()
        vis.setflags(write=False)
        object.__setattr__(self, "ref_visibility", vis)

    @property
    def total_len(self) -> int:
        return self.layout.total_len

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HorizonMask):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.ref_visibility, other.ref_visibility)

    def block_rule(self, q: Segment, k: Segment) -> str:
        """'ones', 'zeros' or 'bitmap' for a (query segment, key segment) block."""
        if q.kind == REF and k.kind == REF:
            return "ones" if q.ref == k.ref else "zeros"
        if (q.kind == REF) != (k.kind == REF) and "noise" in (q.kind, k.kind):
            return "bitmap"
        return "ones"

    def blocks(self) -> list[dict[str, Any]]:
        out = []
        for q in self.layout.segments:
            for k in self.layout.segments:
                out.append({"q": q.label, "k": k.label, "rule": self.block_rule(q, k)})
        return out

    def to_dict(self) -> dict[str, Any]:
        lay = self.layout
        bitmaps = [
            base64.b64encode(np.packbits(row.astype(np.uint8)).tobytes()).decode("ascii")
            for row in self.ref_visibility
        ]
        return {
            "total_len": lay.total_len,
            "noise_h": lay.noise_h,
            "noise_w": lay.noise_w,
            "segments": [
                {"label": s.label, "kind": s.kind, "start": s.start, "len": s.length} for s in lay.segments
            ],
            "ref_grids": [list(g) for g in lay.ref_grids],
            "blocks": self.blocks(),
            "ref_visibility": bitmaps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "HorizonMask":
        segs = obj["segments"]
        if len(segs) < 2:
            raise InvalidSpec("mask JSON needs text and noise segments")
        grids = [tuple(g) for g in obj["ref_grids"]]
        # boxes are not serialized; the layout only needs grid sizes
        dummy = BoundingBox(0.0, 0.0, 1.0, 1.0)

        spec = SceneSpec(
            text_len=segs[0]["len"],
            noise_h=obj["noise_h"],
            noise_w=obj["noise_w"],
            refs=tuple(ReferenceSpec(h, w, dummy) for h, w in grids),
        )
        layout = build_layout(spec, max_len=max(obj["total_len"], 1))
        if layout.total_len != obj["total_len"]:
            raise InvalidSpec("mask JSON total_len is inconsistent with its segments")
        n = layout.num_noise
        vis = np.zeros((len(grids), n), dtype=bool)
        for i, b64 in enumerate(obj["ref_visibility"]):
            bits = np.unpackbits(np.frombuffer(base64.b64decode(b64), dtype=np.uint8))
            vis[i] = bits[:n].astype(bool)
        return cls(layout, vis)

    @classmethod
    def from_json(cls, text: str) -> "HorizonMask":
        return cls.from_dict(json.loads(text))


def build_horizon_mask(layout: TokenLayout, spec: SceneSpec) -> HorizonMask:
    if layout.num_refs != len(spec.refs) or layout.noise_h != spec.noise_h or layout.noise_w != spec.noise_w:
        raise InvalidSpec("layout was not derived from this scene")
    if layout.ref_grids != tuple((r.grid_h, r.grid_w) for r in spec.refs):
        raise InvalidSpec("layout reference grids do not match the scene")
    vis = np.zeros((len(spec.refs), layout.num_noise), dtype=bool)
    for i, ref in enumerate(spec.refs):
        vis[i] = box_bitmap(spec.noise_h, spec.noise_w, ref.box)
    return HorizonMask(layout, vis)


def mask_for_scene(spec: SceneSpec, max_len: int | None = None) -> HorizonMask:
    layout = build_layout(spec) if max_len is None else build_layout(spec, max_len=max_len)
    return build_horizon_mask(layout, spec)


def materialize_dense(mask: HorizonMask, limit: int | None = None) -> np.ndarray:
    L = mask.total_len
    cap = dense_limit() if limit is None else limit
    if L > cap:
        raise DenseTooLarge(f"dense mask of {L} tokens exceeds the limit of {cap}")
    lay = mask.layout
    noise = lay.noise
    M = np.ones((L, L), dtype=bool)
    for qi, q in enumerate(lay.refs):
        for kj, k in enumerate(lay.refs):
            if qi != kj:
                M[q.start:q.stop, k.start:k.stop] = False
        bits = mask.ref_visibility[qi]
        M[q.start:q.stop, noise.start:noise.stop] = bits[None, :]
        M[noise.start:noise.stop, q.start:q.stop] = bits[:, None]
    return M


def visibility_stats(mask: HorizonMask) -> dict[str, Any]:
    """Visible-entry fraction counted from the block structure (no L x L array)."""
    lay = mask.layout
    L = lay.total_len
    T = lay.text.length
    P = lay.num_noise
    counts = [int(c) for c in mask.ref_visibility.sum(axis=1)]
    ones = 2 * T * L - T * T + P * P
    for seg, c in zip(lay.refs, counts):
        ones += seg.length * seg.length + 2 * seg.length * c
    return {
        "total_len": L,
        "ones": ones,
        "ones_fraction": ones / (L * L) if L else 1.0,
        "per_ref_patch_counts": counts,
    }


def to_pgm(dense: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255): 255 visible, 0 blocked."""
    dense = np.asarray(dense, dtype=bool)
    h, w = dense.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + np.where(dense, 255, 0).astype(np.uint8).tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a P5 PGM")
    w, h = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    return pixels.reshape(h, w) == 255
