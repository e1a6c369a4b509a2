"""Position-control benchmark: IoU / mIoU / AP over category-labelled boxes,
and a constrained generator for synthetic benchmark layouts."""
from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import BadConstraints, EmptyDataset, SceneIdMismatch
from .scene import BoundingBox

AP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

NOUNS = (
    "dog", "cat", "backpack", "teapot", "sneaker", "vase", "robot toy", "teddy bear",
    "clock", "candle", "cup", "sunglasses", "bowl", "guitar", "duck toy", "berry bowl",
    "monster toy", "rc car", "can", "boot",
)


@dataclass(frozen=True)
class Subject:
    category: str
    box: BoundingBox


@dataclass(frozen=True)
class Detection:
    category: str
    box: BoundingBox
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.confidence) or not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruthRecord:
    scene_id: str
    subjects: tuple[Subject, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if not self.subjects:
            raise ValueError(f"scene {self.scene_id!r} has no subjects")

    def to_dict(self) -> dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "subjects": [{"category": s.category, "box": s.box.as_list()} for s in self.subjects],
        }


@dataclass(frozen=True)
class DetectionRecord:
    scene_id: str
    detections: tuple[Detection, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", tuple(self.detections))

    def to_dict(self) -> dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "detections": [
                {"category": d.category, "box": d.box.as_list(), "confidence": d.confidence}
                for d in self.detections
            ],
        }


@dataclass(frozen=True)
class SceneMatch:
    """Matching result for one scene.

    ``gt_iou[g]`` is the IoU of GT subject g with its matched detection (0 if
    unmatched); ``det_iou[j]`` is the IoU of detection j with its matched GT,
    or None when detection j is unmatched.
    """

    scene_id: str
    gt_iou: tuple[float, ...]
    gt_to_det: tuple[int | None, ...]
    det_iou: tuple[float | None, ...]
    det_conf: tuple[float, ...]
    missing: bool = False


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union < sys.float_info.min:
        # tiny boxes underflow; rescale lengths (IoU is scale-free)
        s = max(a.width, a.height, b.width, b.height)
        inter = (iw / s) * (ih / s)
        union = (a.width / s) * (a.height / s) + (b.width / s) * (b.height / s) - inter
    return min(1.0, inter / union)


def greedy_match(
    ious: Sequence[Sequence[float | None]], confidences: Sequence[float]
) -> tuple[list[int | None], list[float], list[float | None]]:
    """One-to-one greedy assignment on a GT x detection IoU table.

    ``None`` entries are ineligible pairs (category mismatch). Pairs are taken
    by IoU descending, then detection confidence descending, then GT index,
    then detection index. Returns (gt_to_det, gt_iou, det_iou).
    """
    n_gt, n_det = len(ious), len(confidences)
    cands = sorted(
        (-v, -confidences[j], g, j) for g, row in enumerate(ious) for j, v in enumerate(row) if v is not None
    )
    gt_to_det: list[int | None] = [None] * n_gt
    gt_iou = [0.0] * n_gt
    det_iou: list[float | None] = [None] * n_det
    for neg_iou, _, g, j in cands:
        if gt_to_det[g] is None and det_iou[j] is None:
            gt_to_det[g] = j
            gt_iou[g] = -neg_iou
            det_iou[j] = -neg_iou
    return gt_to_det, gt_iou, det_iou


def match_scene(gt: GroundTruthRecord, det: DetectionRecord | None) -> SceneMatch:
    """Match one scene's detections to its ground truth with ``greedy_match``.

    Only same-category pairs are eligible. ``det=None`` marks a scene absent
    from the detection file: every subject scores 0.
    """
    if det is None:
        n = len(gt.subjects)
        return SceneMatch(gt.scene_id, (0.0,) * n, (None,) * n, (), (), missing=True)
    if det.scene_id != gt.scene_id:
        raise SceneIdMismatch(f"ground truth {gt.scene_id!r} vs detections {det.scene_id!r}")
    table = [
        [iou(s.box, d.box) if d.category == s.category else None for d in det.detections] for s in gt.subjects
    ]
    conf = [d.confidence for d in det.detections]
    gt_to_det, gt_iou, det_iou = greedy_match(table, conf)
    return SceneMatch(gt.scene_id, tuple(gt_iou), tuple(gt_to_det), tuple(det_iou), tuple(conf))


def compute_miou(matches: Sequence[SceneMatch]) -> float:
    """Mean matched IoU over every GT subject of every scene (unmatched count as 0)."""
    vals = [v for m in matches for v in m.gt_iou]
    if not vals:
        raise EmptyDataset("no ground-truth subjects")
    return float(sum(vals) / len(vals))


def ranked_detections(matches: Sequence[SceneMatch]) -> list[tuple[float, str, int, float | None]]:
    """All detections as (confidence, scene_id, index, matched IoU), highest confidence first."""
    dets = [(c, m.scene_id, j, m.det_iou[j]) for m in matches for j, c in enumerate(m.det_conf)]
    dets.sort(key=lambda t: (-t[0], t[1], t[2]))
    return dets


def average_precision(matches: Sequence[SceneMatch], threshold: float) -> float:
    """All-point interpolated area under the PR curve at one IoU threshold."""
    n_gt = sum(len(m.gt_iou) for m in matches)
    if n_gt == 0:
        raise EmptyDataset("no ground-truth subjects")
    dets = ranked_detections(matches)
    if not dets:
        return 0.0
    tp = np.array([v is not None and v >= threshold for *_, v in dets], dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    # monotone precision envelope, then sum over recall steps
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * envelope))


def compute_ap(matches: Sequence[SceneMatch], thresholds: Sequence[float] = AP_THRESHOLDS) -> dict[str, float]:
    """``ap`` is the mean over ``thresholds``; ``ap50`` / ``ap70`` at 0.5 / 0.7."""
    if not matches:
        raise EmptyDataset("no scenes")
    per_t = [average_precision(matches, t) for t in thresholds]
    return {
        "ap": float(np.mean(per_t)),
        "ap50": average_precision(matches, 0.5),
        "ap70": average_precision(matches, 0.7),
    }


@dataclass
class BenchReport:
    iou_mean: float | None
    miou: float | None
    ap: float
    ap50: float
    ap70: float
    single: dict[str, float] | None = None
    multi: dict[str, float] | None = None
    per_scene: list[dict[str, Any]] = field(default_factory=list)
    missing_scenes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "iou_mean": self.iou_mean,
            "miou": self.miou,
            "ap": self.ap,
            "ap50": self.ap50,
            "ap70": self.ap70,
            "single": self.single,
            "multi": self.multi,
            "missing_scenes": self.missing_scenes,
            "per_scene": self.per_scene,
        }

    def to_text(self, method: str = "ours") -> str:
        def fmt(v: float | None) -> str:
            return "-" if v is None else f"{v:.3f}"

        def ap_triplet(d: dict[str, float] | None) -> str:
            if d is None:
                return "- / - / -"
            return f"{fmt(d['ap'])} / {fmt(d['ap50'])} / {fmt(d['ap70'])}"

        head = f"{'Method':<12}| {'IoU':>6} | {'AP / AP50 / AP70':<23}| {'mIoU':>6} | {'AP / AP50 / AP70':<23}"
        row = (
            f"{method:<12}| {fmt(self.iou_mean):>6} | {ap_triplet(self.single):<23}"
            f"| {fmt(self.miou):>6} | {ap_triplet(self.multi):<23}"
        )
        total = f"all scenes: AP {fmt(self.ap)}  AP50 {fmt(self.ap50)}  AP70 {fmt(self.ap70)}"
        lines = [f"{'':<12}| {'Single-Subject':^32} | {'Multi-Subject':^32}", head, "-" * len(head), row, total]
        if self.missing_scenes:
            lines.append(f"scenes without detections (scored 0): {len(self.missing_scenes)}")
        return "\n".join(lines) + "\n"


def evaluate(gts: Sequence[GroundTruthRecord], dets: Sequence[DetectionRecord]) -> BenchReport:
    """Score detections against ground truth.

    Scenes missing from ``dets`` score 0; a detection scene with no ground
    truth raises SceneIdMismatch.
    """
    if not gts:
        raise EmptyDataset("no ground-truth scenes")
    gt_ids = [g.scene_id for g in gts]
    if len(set(gt_ids)) != len(gt_ids):
        raise ValueError("duplicate scene_id in ground truth")
    by_id: dict[str, DetectionRecord] = {}
    for d in dets:
        if d.scene_id in by_id:
            raise ValueError(f"duplicate scene_id {d.scene_id!r} in detections")
        by_id[d.scene_id] = d
    unknown = sorted(set(by_id) - set(gt_ids))
    if unknown:
        raise SceneIdMismatch(f"detections for unknown scenes: {unknown[:5]}")

    matches = [match_scene(g, by_id.get(g.scene_id)) for g in gts]
    singles = [m for g, m in zip(gts, matches) if len(g.subjects) == 1]
    multis = [m for g, m in zip(gts, matches) if len(g.subjects) > 1]

    def group(ms: list[SceneMatch]) -> dict[str, float] | None:
        return compute_ap(ms) if ms else None

    overall = compute_ap(matches)
    per_scene = [
        {
            "scene_id": m.scene_id,
            "num_subjects": len(m.gt_iou),
            "num_detections": len(m.det_conf),
            "ious": list(m.gt_iou),
            "mean_iou": sum(m.gt_iou) / len(m.gt_iou),
            "missing": m.missing,
        }
        for m in matches
    ]
    return BenchReport(
        iou_mean=compute_miou(singles) if singles else None,
        miou=compute_miou(multis) if multis else None,
        ap=overall["ap"],
        ap50=overall["ap50"],
        ap70=overall["ap70"],
        single=group(singles),
        multi=group(multis),
        per_scene=per_scene,
        missing_scenes=[m.scene_id for m in matches if m.missing],
    )


# ---------------------------------------------------------------- generator


@dataclass(frozen=True)
class BenchConstraints:
    min_area: float = 0.04
    max_area: float = 0.60
    min_aspect: float = 1.0 / 3.0
    max_aspect: float = 3.0
    min_subjects: int = 2
    max_subjects: int = 3
    challenging_fraction: float = 0.30
    challenging_max_iou: float = 0.30
    adjacency_gap: float = 0.02
    max_pair_iou: float = 0.30  # any pair in a multi-subject scene
    decimals: int = 6

    def validate(self) -> None:
        if not 0.0 < self.min_area <= self.max_area <= 1.0:
            raise BadConstraints("need 0 < min_area <= max_area <= 1")
        if not 0.0 < self.min_aspect <= self.max_aspect:
            raise BadConstraints("need 0 < min_aspect <= max_aspect")
        # some box of min_area must fit the unit canvas within the aspect range
        best = min(max(self.min_aspect, 1.0), self.max_aspect)
        if max(math.sqrt(self.min_area * best), math.sqrt(self.min_area / best)) > 1.0:
            raise BadConstraints("no box with min_area fits the canvas in the aspect range")
        if not 2 <= self.min_subjects <= self.max_subjects:
            raise BadConstraints("need 2 <= min_subjects <= max_subjects")
        if not 0.0 <= self.challenging_fraction <= 1.0:
            raise BadConstraints("challenging_fraction must lie in [0, 1]")
        if not 0.0 < self.challenging_max_iou <= self.max_pair_iou <= 1.0:
            raise BadConstraints("need 0 < challenging_max_iou <= max_pair_iou <= 1")
        if self.adjacency_gap <= 0:
            raise BadConstraints("adjacency_gap must be positive")
        if not 2 <= self.decimals <= 12:
            raise BadConstraints("decimals must lie in [2, 12]")


def box_gap(a: BoundingBox, b: BoundingBox) -> float:
    """Euclidean distance between two boxes (0 if they touch or overlap)."""
    dx = max(0.0, b.x_min - a.x_max, a.x_min - b.x_max)
    dy = max(0.0, b.y_min - a.y_max, a.y_min - b.y_max)
    return math.hypot(dx, dy)


def is_challenging_pair(a: BoundingBox, b: BoundingBox, c: BenchConstraints) -> bool:
    v = iou(a, b)
    if 0.0 < v <= c.challenging_max_iou:
        return True
    return v == 0.0 and box_gap(a, b) < c.adjacency_gap


def is_challenging(rec: GroundTruthRecord, c: BenchConstraints) -> bool:
    s = rec.subjects
    return any(is_challenging_pair(s[i].box, s[j].box, c) for i in range(len(s)) for j in range(i + 1, len(s)))


def box_ok(box: BoundingBox, c: BenchConstraints) -> bool:
    aspect = box.width / box.height
    return c.min_area <= box.area <= c.max_area and c.min_aspect <= aspect <= c.max_aspect


def validate_scene(rec: GroundTruthRecord, c: BenchConstraints = BenchConstraints()) -> list[str]:
    """Constraint violations of one generated scene (empty list = valid)."""
    problems = []
    n = len(rec.subjects)
    if n != 1 and not c.min_subjects <= n <= c.max_subjects:
        problems.append(f"{n} subjects")
    for k, s in enumerate(rec.subjects):
        if not box_ok(s.box, c):
            problems.append(f"subject {k}: area {s.box.area:.4f} / aspect {s.box.width / s.box.height:.3f}")
        if s.category not in NOUNS:
            problems.append(f"subject {k}: unknown category {s.category!r}")
    for i in range(n):
        for j in range(i + 1, n):
            if iou(rec.subjects[i].box, rec.subjects[j].box) > c.max_pair_iou:
                problems.append(f"subjects {i},{j} overlap too much")
    return problems


def _round_box(x0: float, y0: float, x1: float, y1: float, decimals: int) -> BoundingBox | None:
    vals = [round(min(max(v, 0.0), 1.0), decimals) for v in (x0, y0, x1, y1)]
    if not (vals[0] < vals[2] and vals[1] < vals[3]):
        return None
    return BoundingBox(*vals)


def _sample_box(rng: np.random.Generator, c: BenchConstraints) -> BoundingBox:
    while True:
        area = rng.uniform(c.min_area, c.max_area)
        aspect = math.exp(rng.uniform(math.log(c.min_aspect), math.log(c.max_aspect)))
        w, h = math.sqrt(area * aspect), math.sqrt(area / aspect)
        if w > 1.0 or h > 1.0:
            continue
        x0, y0 = rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)
        box = _round_box(x0, y0, x0 + w, y0 + h, c.decimals)
        if box is not None and box_ok(box, c):
            return box


def _sample_adjacent(rng: np.random.Generator, anchor: BoundingBox, c: BenchConstraints) -> BoundingBox | None:
    """A box placed next to ``anchor`` with a gap below the adjacency threshold."""
    shape = _sample_box(rng, c)
    w, h = shape.width, shape.height
    gap = rng.uniform(0.0, c.adjacency_gap * 0.5)
    side = int(rng.integers(4))
    if side == 0:  # right
        x0, y0 = anchor.x_max + gap, rng.uniform(anchor.y_min - h, anchor.y_max)
    elif side == 1:  # left
        x0, y0 = anchor.x_min - gap - w, rng.uniform(anchor.y_min - h, anchor.y_max)
    elif side == 2:  # below
        x0, y0 = rng.uniform(anchor.x_min - w, anchor.x_max), anchor.y_max + gap
    else:  # above
        x0, y0 = rng.uniform(anchor.x_min - w, anchor.x_max), anchor.y_min - gap - h
    if x0 < 0 or y0 < 0 or x0 + w > 1 or y0 + h > 1:
        return None
    box = _round_box(x0, y0, x0 + w, y0 + h, c.decimals)
    return box if box is not None and box_ok(box, c) else None


def _multi_scene(
    rng: np.random.Generator, n: int, challenging: bool, c: BenchConstraints, max_tries: int = 10000
) -> list[BoundingBox]:
    for _ in range(max_tries):
        boxes = [_sample_box(rng, c)]
        if challenging:
            if rng.random() < 0.5:
                nb = _sample_adjacent(rng, boxes[0], c)
            else:
                nb = _sample_box(rng, c)
            if nb is None or not is_challenging_pair(boxes[0], nb, c):
                continue
            boxes.append(nb)
        while len(boxes) < n:
            cand = _sample_box(rng, c)
            if all(iou(cand, b) <= c.max_pair_iou for b in boxes):
                boxes.append(cand)
            elif rng.random() < 0.05:
                break  # restart the scene rather than spin on a crowded canvas
        if len(boxes) == n and all(
            iou(boxes[i], boxes[j]) <= c.max_pair_iou for i in range(n) for j in range(i + 1, n)
        ):
            return boxes
    raise BadConstraints("could not place a multi-subject scene under these constraints")


def generate_bench(
    count_single: int = 252,
    count_multi: int = 296,
    seed: int = 0,
    constraints: BenchConstraints | None = None,
) -> list[GroundTruthRecord]:
    """Seeded synthetic benchmark: single-subject scenes first, then multi-subject ones.

    At least ``challenging_fraction`` of the multi-subject scenes are built
    around a box pair that overlaps slightly or nearly touches.
    """
    c = constraints or BenchConstraints()
    c.validate()
    if count_single < 0 or count_multi < 0:
        raise BadConstraints("scene counts must be non-negative")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out: list[GroundTruthRecord] = []

    for i in range(count_single):
        cat = NOUNS[int(rng.integers(len(NOUNS)))]
        out.append(GroundTruthRecord(f"single_{i:04d}", (Subject(cat, _sample_box(rng, c)),)))

    n_hard = math.ceil(c.challenging_fraction * count_multi)
    hard = set(rng.permutation(count_multi)[:n_hard].tolist()) if count_multi else set()
    for i in range(count_multi):
        n = int(rng.integers(c.min_subjects, c.max_subjects + 1))
        boxes = _multi_scene(rng, n, i in hard, c)
        cats = rng.choice(len(NOUNS), size=n, replace=False)
        order = rng.permutation(n)  # the challenging pair should not always come first
        subjects = tuple(Subject(NOUNS[int(cats[k])], boxes[int(order[k])]) for k in range(n))
        out.append(GroundTruthRecord(f"multi_{i:04d}", subjects))
    return out


# ---------------------------------------------------------------- JSONL I/O


def _parse_box(obj: Any, pixel_size: tuple[float, float] | None) -> BoundingBox:
    if pixel_size is not None:
        return BoundingBox.from_pixels(obj, *pixel_size)
    return BoundingBox.from_list(obj)


def read_gt_jsonl(lines: Iterable[str], pixel_size: tuple[float, float] | None = None) -> list[GroundTruthRecord]:
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            subs = tuple(Subject(str(s["category"]), _parse_box(s["box"], pixel_size)) for s in obj["subjects"])
            out.append(GroundTruthRecord(str(obj["scene_id"]), subs))
        except KeyError as exc:
            raise ValueError(f"line {lineno}: missing field {exc}") from exc
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return out


def read_det_jsonl(lines: Iterable[str], pixel_size: tuple[float, float] | None = None) -> list[DetectionRecord]:
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            dets = tuple(
                Detection(str(d["category"]), _parse_box(d["box"], pixel_size), float(d.get("confidence", 1.0)))
                for d in obj["detections"]
            )
            out.append(DetectionRecord(str(obj["scene_id"]), dets))
        except KeyError as exc:
            raise ValueError(f"line {lineno}: missing field {exc}") from exc
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return out


def records_jsonl(records: Iterable[GroundTruthRecord | DetectionRecord]) -> str:
    return "".join(json.dumps(r.to_dict()) + "\n" for r in records)


def gt_as_detections(gts: Iterable[GroundTruthRecord]) -> list[DetectionRecord]:
    return [DetectionRecord(g.scene_id, tuple(Detection(s.category, s.box) for s in g.subjects)) for g in gts]
