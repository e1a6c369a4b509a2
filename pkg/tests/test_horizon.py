import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_mask
from regional_horizon.errors import DenseTooLarge
from regional_horizon.horizon import (
    HorizonMask,
    build_horizon_mask,
    dense_limit,
    mask_for_scene,
    materialize_dense,
    patch_in_box,
    read_pgm,
    to_pgm,
    visibility_stats,
)
from regional_horizon.scene import BoundingBox, Rect, ReferenceSpec, SceneSpec, build_layout
from strategies import scenes


def test_patch_in_box_examples():
    assert not patch_in_box(Rect(0, 0, 0.25, 0.25), BoundingBox(0.5, 0.5, 1, 1))
    assert patch_in_box(Rect(0.5, 0.25, 0.75, 0.5), BoundingBox(0.25, 0.25, 0.75, 0.75))
    # shares only the corner point (0.75, 0.75)
    assert not patch_in_box(Rect(0.75, 0.75, 1, 1), BoundingBox(0.25, 0.25, 0.75, 0.75))


def test_centered_box_bitmap():
    spec = SceneSpec(0, 4, 4, (ReferenceSpec(2, 2, BoundingBox(0.25, 0.25, 0.75, 0.75)),))
    mask = mask_for_scene(spec)
    assert np.flatnonzero(mask.ref_visibility[0]).tolist() == [5, 6, 9, 10]


def test_full_canvas_box():
    spec = SceneSpec(3, 5, 7, (ReferenceSpec(2, 2, BoundingBox(0, 0, 1, 1)),))
    assert mask_for_scene(spec).ref_visibility.all()


def test_two_refs_block_each_other():
    spec = SceneSpec(2, 3, 3, (ReferenceSpec(2, 2, BoundingBox(0, 0, 1, 1)), ReferenceSpec(1, 3, BoundingBox(0, 0, 1, 1))))
    mask = mask_for_scene(spec)
    M = materialize_dense(mask)
    r1, r2 = mask.layout.refs
    assert not M[r1.start:r1.stop, r2.start:r2.stop].any()
    assert not M[r2.start:r2.stop, r1.start:r1.stop].any()


def test_no_refs_all_ones():
    mask = mask_for_scene(SceneSpec(4, 2, 2))
    M = materialize_dense(mask)
    assert M.shape == (8, 8) and M.all()
    assert visibility_stats(mask)["ones_fraction"] == 1.0


def test_five_token_example():
    spec = SceneSpec(0, 2, 2, (ReferenceSpec(1, 1, BoundingBox(0, 0, 0.5, 0.5)),))
    mask = mask_for_scene(spec)
    M = materialize_dense(mask).astype(int)
    assert M[4].tolist() == [1, 0, 0, 0, 1]
    assert M[:, 4].tolist() == [1, 0, 0, 0, 1]
    stats = visibility_stats(mask)
    assert stats["ones"] == 19
    assert stats["ones_fraction"] == 19 / 25


def test_quarter_boxes_patch_counts():
    spec = SceneSpec(
        0, 64, 64,
        (ReferenceSpec(32, 32, BoundingBox(0, 0, 0.5, 0.5)), ReferenceSpec(32, 32, BoundingBox(0.5, 0.5, 1, 1))),
    )
    assert visibility_stats(mask_for_scene(spec))["per_ref_patch_counts"] == [1024, 1024]


def test_dense_limit(monkeypatch):
    mask = mask_for_scene(SceneSpec(0, 4, 4))
    with pytest.raises(DenseTooLarge):
        materialize_dense(mask, limit=15)
    monkeypatch.setenv("HORIZON_DENSE_LIMIT", "10")
    assert dense_limit() == 10
    with pytest.raises(DenseTooLarge):
        materialize_dense(mask)
    monkeypatch.delenv("HORIZON_DENSE_LIMIT")
    assert dense_limit() == 8192


def test_oracle_equivalence_fixed_seed(rng):
    from regional_horizon.checks import random_scene

    for _ in range(100):
        spec = random_scene(rng)
        assert np.array_equal(materialize_dense(mask_for_scene(spec)), naive_mask(spec))


@settings(max_examples=100, deadline=None)
@given(scenes())
def test_mask_invariants(spec):
    mask = mask_for_scene(spec)
    M = materialize_dense(mask)
    assert np.array_equal(M, M.T)
    assert M.diagonal().all()
    assert M.any(axis=1).all()
    lay = mask.layout
    T = lay.text.length
    assert M[:T].all() and M[:, :T].all()
    assert M[lay.noise.start:lay.noise.stop, lay.noise.start:lay.noise.stop].all()
    for s in lay.refs:
        assert M[s.start:s.stop, s.start:s.stop].all()
    stats = visibility_stats(mask)
    assert stats["ones"] == int(M.sum())
    assert stats["ones_fraction"] == M.sum() / M.size


@settings(max_examples=100, deadline=None)
@given(scenes(max_refs=1), st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0, 0.5))
def test_enlarging_box_never_clears_bits(spec, dl, dt, dr, db):
    if not spec.refs:
        return
    b = spec.refs[0].box
    bigger = BoundingBox(max(0.0, b.x_min - dl), max(0.0, b.y_min - dt), min(1.0, b.x_max + dr), min(1.0, b.y_max + db))
    grown = SceneSpec(spec.text_len, spec.noise_h, spec.noise_w, (ReferenceSpec(1, 1, bigger),))
    small = SceneSpec(spec.text_len, spec.noise_h, spec.noise_w, (ReferenceSpec(1, 1, b),))
    before = mask_for_scene(small).ref_visibility[0]
    after = mask_for_scene(grown).ref_visibility[0]
    assert not (before & ~after).any()


def test_block_storage_is_linear():
    spec = SceneSpec(100, 64, 64, (ReferenceSpec(32, 32, BoundingBox(0, 0, 0.5, 0.5)),))
    mask = mask_for_scene(spec)
    assert mask.ref_visibility.size == 64 * 64


@settings(max_examples=50, deadline=None)
@given(scenes())
def test_json_round_trip(spec):
    mask = mask_for_scene(spec)
    text = mask.to_json()
    again = HorizonMask.from_json(text)
    assert again == mask
    assert again.to_json() == text
    rules = {(b["q"], b["k"]): b["rule"] for b in json.loads(text)["blocks"]}
    if len(spec.refs) >= 2:
        assert rules[("Ref(1)", "Ref(2)")] == "zeros"
    if spec.refs:
        assert rules[("Ref(1)", "Noise")] == "bitmap"
        assert rules[("Text", "Ref(1)")] == "ones"


def test_pgm_matches_dense():
    spec = SceneSpec(0, 4, 4, (ReferenceSpec(2, 2, BoundingBox(0.25, 0.25, 0.75, 0.75)),))
    M = materialize_dense(mask_for_scene(spec))
    data = to_pgm(M)
    assert data.startswith(b"P5\n20 20\n255\n")
    assert np.array_equal(read_pgm(data), M)
    assert np.array_equal(read_pgm(data), naive_mask(spec))


def test_layout_must_match_scene():
    from regional_horizon.errors import InvalidSpec

    a = SceneSpec(0, 4, 4, (ReferenceSpec(2, 2, BoundingBox(0, 0, 1, 1)),))
    b = SceneSpec(0, 4, 4, (ReferenceSpec(3, 2, BoundingBox(0, 0, 1, 1)),))
    with pytest.raises(InvalidSpec):
        build_horizon_mask(build_layout(a), b)
