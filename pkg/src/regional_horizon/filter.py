"""Rank-aggregation filter over paired-sample consistency scores.

Each pair carries four ingested scores: CLIP-I and DINO (fused into one
visual score), an MLLM similarity score and a description-based score.
Every channel is ranked descending (rank 1 = most similar, ties share the
mean rank), the three ranks are averaged, and pairs with the lowest
average rank are kept.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import BadPolicy, EmptyDataset

DEFAULT_TOP_FRACTION = 0.245


@dataclass(frozen=True)
class ScoreRecord:
    pair_id: str
    clip_i: float
    dino: float
    s_vlm: float
    s_ds: float

    def __post_init__(self) -> None:
        if not isinstance(self.pair_id, str):
            raise ValueError("pair_id must be a string")
        for name in ("clip_i", "dino", "s_vlm", "s_ds"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"{name} must be a finite number, got {v!r}")
        for name in ("clip_i", "dino"):
            if not -1.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [-1, 1]")

    @classmethod
    def from_dict(cls, obj: dict) -> "ScoreRecord":
        if not isinstance(obj, dict):
            raise ValueError("record must be a JSON object")
        missing = [k for k in ("pair_id", "clip_i", "dino", "s_vlm", "s_ds") if k not in obj]
        if missing:
            raise ValueError(f"missing fields {missing}")
        return cls(obj["pair_id"], obj["clip_i"], obj["dino"], obj["s_vlm"], obj["s_ds"])


@dataclass(frozen=True)
class RankedRecord:
    pair_id: str
    r_v: float
    r_vlm: float
    r_ds: float
    rank: float

    def to_dict(self, kept: bool | None = None) -> dict:
        d = {"pair_id": self.pair_id, "r_v": self.r_v, "r_vlm": self.r_vlm, "r_ds": self.r_ds, "rank": self.rank}
        if kept is not None:
            d["kept"] = kept
        return d


@dataclass(frozen=True)
class SelectionPolicy:
    """Exactly one of ``top_k``, ``top_fraction`` (floor of n * f) or ``rank_threshold`` (rank <= t)."""

    kind: str = "top_fraction"
    value: float = DEFAULT_TOP_FRACTION

    def __post_init__(self) -> None:
        v = self.value
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise BadPolicy(f"policy value must be a finite number, got {v!r}")
        if self.kind == "top_k":
            if int(v) != v or v < 0:
                raise BadPolicy(f"top_k must be a non-negative integer, got {v}")
        elif self.kind == "top_fraction":
            if not 0.0 <= v <= 1.0:
                raise BadPolicy(f"top_fraction must lie in [0, 1], got {v}")
        elif self.kind != "rank_threshold":
            raise BadPolicy(f"unknown policy {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "SelectionPolicy":
        """Parse ``kind=value``, e.g. ``top_fraction=0.245``."""
        kind, sep, raw = text.partition("=")
        if not sep:
            raise BadPolicy(f"policy must look like kind=value, got {text!r}")
        try:
            value = float(raw)
        except ValueError as exc:
            raise BadPolicy(f"bad policy value {raw!r}") from exc
        return cls(kind.strip(), value)


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def combine_visual(records: Sequence[ScoreRecord]) -> np.ndarray:
    """Visual score per record: mean of min-max normalized CLIP-I and DINO."""
    if len(records) == 0:
        raise EmptyDataset("no score records")
    clip = np.array([r.clip_i for r in records], dtype=np.float64)
    dino = np.array([r.dino for r in records], dtype=np.float64)
    return (_minmax(clip) + _minmax(dino)) / 2.0


def fractional_rank(values: Iterable[float], descending: bool = True) -> np.ndarray:
    """Average ranks starting at 1; with ``descending`` the largest value gets rank 1."""
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    n = len(x)
    if n == 0:
        return np.zeros(0)
    key = -x if descending else x
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    # run boundaries of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, sorted_key[1:] != sorted_key[:-1]])
    ends = np.r_[starts[1:], n]
    run_rank = (starts + ends + 1) / 2.0  # mean of positions start+1 .. end
    ranks = np.empty(n)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def aggregate(records: Sequence[ScoreRecord]) -> list[RankedRecord]:
    """Average the three channel ranks; sorted by (rank, pair_id)."""
    if len(records) == 0:
        raise EmptyDataset("no score records")
    ids = [r.pair_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("pair_id values must be unique")
    r_v = fractional_rank(combine_visual(records))
    r_vlm = fractional_rank([r.s_vlm for r in records])
    r_ds = fractional_rank([r.s_ds for r in records])
    rank = (r_v + r_vlm + r_ds) / 3.0
    out = [
        RankedRecord(pid, float(a), float(b), float(c), float(m))
        for pid, a, b, c, m in zip(ids, r_v, r_vlm, r_ds, rank)
    ]
    out.sort(key=lambda r: (r.rank, r.pair_id))
    return out


def select(ranked: Sequence[RankedRecord], policy: SelectionPolicy = SelectionPolicy()) -> list[str]:
    """Pair ids kept under ``policy``; ``ranked`` must already be sorted by aggregate."""
    if not isinstance(policy, SelectionPolicy):
        raise BadPolicy("policy must be a SelectionPolicy")
    if policy.kind == "top_k":
        return [r.pair_id for r in ranked[: int(policy.value)]]
    if policy.kind == "top_fraction":
        k = math.floor(len(ranked) * policy.value)
        return [r.pair_id for r in ranked[:k]]
    return [r.pair_id for r in ranked if r.rank <= policy.value]


def read_scores_jsonl(lines: Iterable[str]) -> list[ScoreRecord]:
    """Parse score JSONL; blank lines are skipped. Errors name the 1-based line."""
    out: list[ScoreRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = ScoreRecord.from_dict(json.loads(line))
        except (json.JSONDecodeError, ValueError, TypeError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
        if rec.pair_id in seen:
            raise ValueError(f"line {lineno}: duplicate pair_id {rec.pair_id!r}")
        seen.add(rec.pair_id)
        out.append(rec)
    return out


def ranked_jsonl(ranked: Sequence[RankedRecord], kept: Iterable[str]) -> str:
    keep = set(kept)
    return "".join(json.dumps(r.to_dict(r.pair_id in keep)) + "\n" for r in ranked)
