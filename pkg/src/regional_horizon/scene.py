"""Scene description and the joint token layout [text | noise | ref_1 .. ref_N].

Boxes live in normalized canvas coordinates (fractions of the noise grid's
width/height). Noise and reference grids are flattened row-major.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

from .errors import IndexOutOfRange, InvalidSpec, SequenceTooLong

DEFAULT_MAX_SEQ_LEN = 16384

TEXT = "text"
NOISE = "noise"
REF = "ref"


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
            raise InvalidSpec(f"box coordinates must be finite numbers: {vals}")
        if not (0.0 <= self.x_min < self.x_max <= 1.0):
            raise InvalidSpec(f"need 0 <= x_min < x_max <= 1, got {vals}")
        if not (0.0 <= self.y_min < self.y_max <= 1.0):
            raise InvalidSpec(f"need 0 <= y_min < y_max <= 1, got {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [float(self.x_min), float(self.y_min), float(self.x_max), float(self.y_max)]

    @classmethod
    def from_list(cls, coords: Sequence[float]) -> "BoundingBox":
        if len(coords) != 4:
            raise InvalidSpec(f"box needs 4 coordinates, got {len(coords)}")
        return cls(*(float(c) for c in coords))

    @classmethod
    def from_pixels(cls, coords: Sequence[float], width: float, height: float) -> "BoundingBox":
        """Convert an (x0, y0, x1, y1) pixel box on a ``width`` x ``height`` image."""
        if width <= 0 or height <= 0:
            raise InvalidSpec("image dimensions must be positive")
        x0, y0, x1, y1 = (float(c) for c in coords)
        return cls(x0 / width, y0 / height, x1 / width, y1 / height)


@dataclass(frozen=True)
class Rect:
    """Half-open canvas cell [x0, x1) x [y0, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float


@dataclass(frozen=True)
class ReferenceSpec:
    grid_h: int
    grid_w: int
    box: BoundingBox
    category: str = ""

    def __post_init__(self) -> None:
        if not (_is_int(self.grid_h) and _is_int(self.grid_w)) or self.grid_h < 1 or self.grid_w < 1:
            raise InvalidSpec(f"reference grid must be positive integers, got {self.grid_h}x{self.grid_w}")
        if not isinstance(self.box, BoundingBox):
            raise InvalidSpec("reference box must be a BoundingBox")

    @property
    def num_tokens(self) -> int:
        return self.grid_h * self.grid_w


@dataclass(frozen=True)
class SceneSpec:
    text_len: int
    noise_h: int
    noise_w: int
    refs: tuple[ReferenceSpec, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        # accept any sequence for refs but store a tuple
        object.__setattr__(self, "refs", tuple(self.refs))
        if not _is_int(self.text_len) or self.text_len < 0:
            raise InvalidSpec(f"text_len must be a non-negative integer, got {self.text_len!r}")
        if not (_is_int(self.noise_h) and _is_int(self.noise_w)) or self.noise_h < 1 or self.noise_w < 1:
            raise InvalidSpec(f"noise grid must be positive integers, got {self.noise_h}x{self.noise_w}")
        if not _is_int(self.seed) or not (0 <= self.seed < 2**64):
            raise InvalidSpec(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        for r in self.refs:
            if not isinstance(r, ReferenceSpec):
                raise InvalidSpec("refs must contain ReferenceSpec values")

    @property
    def num_noise(self) -> int:
        return self.noise_h * self.noise_w

    @property
    def total_len(self) -> int:
        return self.text_len + self.num_noise + sum(r.num_tokens for r in self.refs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "text_len": self.text_len,
            "noise_h": self.noise_h,
            "noise_w": self.noise_w,
            "seed": self.seed,
            "refs": [
                {"grid_h": r.grid_h, "grid_w": r.grid_w, "category": r.category, "box": r.box.as_list()}
                for r in self.refs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: Any, pixel_size: tuple[float, float] | None = None) -> "SceneSpec":
        """Parse the scene JSON object. ``pixel_size=(W, H)`` means boxes are in pixels."""
        if not isinstance(obj, dict):
            raise InvalidSpec("scene must be a JSON object")
        try:
            refs = []
            for r in obj.get("refs", []):
                coords = r["box"]
                if pixel_size is not None:
                    box = BoundingBox.from_pixels(coords, *pixel_size)
                else:
                    box = BoundingBox.from_list(coords)
                refs.append(ReferenceSpec(r["grid_h"], r["grid_w"], box, str(r.get("category", ""))))
            return cls(
                text_len=obj["text_len"],
                noise_h=obj["noise_h"],
                noise_w=obj["noise_w"],
                refs=tuple(refs),
                seed=obj.get("seed", 0),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"malformed scene: {exc!r}") from exc

    @classmethod
    def from_json(cls, text: str, pixel_size: tuple[float, float] | None = None) -> "SceneSpec":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"scene is not valid JSON: {exc}") from exc
        return cls.from_dict(obj, pixel_size=pixel_size)


@dataclass(frozen=True)
class Segment:
    kind: str
    start: int
    length: int
    ref: int | None = None  # 0-based reference index for REF segments

    @property
    def stop(self) -> int:
        return self.start + self.length

    @property
    def label(self) -> str:
        if self.kind == REF:
            return f"Ref({self.ref + 1})"
        return self.kind.capitalize()


@dataclass(frozen=True)
class TokenLayout:
    segments: tuple[Segment, ...]
    total_len: int
    noise_h: int
    noise_w: int
    ref_grids: tuple[tuple[int, int], ...] = field(default=())

    @property
    def text(self) -> Segment:
        return self.segments[0]

    @property
    def noise(self) -> Segment:
        return self.segments[1]

    @property
    def refs(self) -> tuple[Segment, ...]:
        return self.segments[2:]

    @property
    def num_refs(self) -> int:
        return len(self.segments) - 2

    @property
    def num_noise(self) -> int:
        return self.noise_h * self.noise_w

    def nonempty_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.length > 0]


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def build_layout(spec: SceneSpec, max_len: int = DEFAULT_MAX_SEQ_LEN) -> TokenLayout:
    """Concatenate text, noise and reference segments in that order.

    The text segment is always present (possibly empty) so that
    ``layout.segments[0]`` / ``[1]`` are text / noise for every scene.
    """
    if not isinstance(spec, SceneSpec):
        raise InvalidSpec("build_layout expects a SceneSpec")
    total = spec.total_len
    if total > max_len:
        raise SequenceTooLong(f"scene needs {total} tokens, limit is {max_len}")
    segs = [Segment(TEXT, 0, spec.text_len), Segment(NOISE, spec.text_len, spec.num_noise)]
    pos = spec.text_len + spec.num_noise
    for i, r in enumerate(spec.refs):
        segs.append(Segment(REF, pos, r.num_tokens, ref=i))
        pos += r.num_tokens
    return TokenLayout(
        segments=tuple(segs),
        total_len=pos,
        noise_h=spec.noise_h,
        noise_w=spec.noise_w,
        ref_grids=tuple((r.grid_h, r.grid_w) for r in spec.refs),
    )


def patch_cell(layout: TokenLayout, noise_index: int) -> Rect:
    """Canvas cell covered by noise patch ``noise_index`` (row-major)."""
    if not 0 <= noise_index < layout.num_noise:
        raise IndexOutOfRange(f"noise index {noise_index} outside [0, {layout.num_noise})")
    r, c = divmod(noise_index, layout.noise_w)
    return Rect(c / layout.noise_w, r / layout.noise_h, (c + 1) / layout.noise_w, (r + 1) / layout.noise_h)
