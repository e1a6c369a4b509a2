"""Regenerate the small JSON/JSONL fixtures under tests/data/.

    python scripts/make_fixtures.py
"""
import json
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"


def scores_400(seed: int = 400) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(400):
        rows.append({
            "pair_id": f"pair_{i:04d}",
            "clip_i": round(float(rng.uniform(0.55, 0.98)), 3),
            "dino": round(float(rng.uniform(0.35, 0.95)), 3),
            # MLLM grades are coarse integers, so ties are common
            "s_vlm": float(rng.integers(1, 11)),
            "s_ds": round(float(rng.uniform(0, 10)), 1),
        })
    return rows


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    with open(DATA / "scores_400.jsonl", "w") as f:
        for row in scores_400():
            f.write(json.dumps(row) + "\n")

    # two subjects; detections with IoU 0.8 (conf 0.9) and 0.6 (conf 0.8)
    gt = {"scene_id": "hand", "subjects": [
        {"category": "dog", "box": [0.0, 0.0, 0.5, 1.0]},
        {"category": "cat", "box": [0.5, 0.0, 1.0, 1.0]},
    ]}
    det = {"scene_id": "hand", "detections": [
        {"category": "dog", "box": [0.0, 0.0, 0.4, 1.0], "confidence": 0.9},
        {"category": "cat", "box": [0.5, 0.0, 0.8, 1.0], "confidence": 0.8},
    ]}
    (DATA / "hand_gt.jsonl").write_text(json.dumps(gt) + "\n")
    (DATA / "hand_det.jsonl").write_text(json.dumps(det) + "\n")

    scene = {"text_len": 0, "noise_h": 4, "noise_w": 4, "seed": 0,
             "refs": [{"grid_h": 2, "grid_w": 2, "category": "dog", "box": [0.25, 0.25, 0.75, 0.75]}]}
    (DATA / "scene_centered.json").write_text(json.dumps(scene) + "\n")
    (DATA / "scene_empty.json").write_text(json.dumps({"text_len": 4, "noise_h": 2, "noise_w": 2, "seed": 0, "refs": []}) + "\n")


if __name__ == "__main__":
    main()
