import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwkit import (
    BlendWeights,
    FaceLandmarks,
    FaceVectorField,
    InputError,
    RasterImage,
    blend_face,
    load_landmark_database,
    load_landmarks,
    orientation_similarity,
    top_m_candidates,
    vector_field,
)
from gwkit.errors import DimensionMismatchError
from gwkit.facegeom import SIMILARITY_DELTA

SQUARE = dict(
    right_eye=(0.0, 0.0),
    left_eye=(2.0, 0.0),
    mouth_left=(2.0, 2.0),
    mouth_right=(0.0, 2.0),
    nose=(1.0, 1.0),
)

coords = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)

# face-shaped landmark sets: mouth and nose offsets bounded in inter-ocular
# units, so the normalized field stays O(1) as it does on real faces
unit_offset = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


@st.composite
def landmark_sets(draw):
    iod = draw(st.floats(min_value=0.5, max_value=50.0, allow_nan=False))
    angle = draw(st.floats(min_value=-np.pi, max_value=np.pi, allow_nan=False))
    right_eye = np.array([draw(coords), draw(coords)])
    left_eye = right_eye + iod * np.array([np.cos(angle), np.sin(angle)])
    points = {"right_eye": right_eye, "left_eye": left_eye}
    for name in ("mouth_left", "mouth_right", "nose"):
        offset = np.array([draw(unit_offset), draw(unit_offset)])
        points[name] = right_eye + iod * offset
    return FaceLandmarks(**points)


# --- vector field ---


def test_vector_field_square_fixture():
    field = vector_field(FaceLandmarks(**SQUARE))
    np.testing.assert_allclose(field.v1, [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(field.v2, [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(field.v3, [-1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(field.v4, [0.0, -1.0], atol=1e-15)
    np.testing.assert_allclose(field.v5, [0.0, 0.5], atol=1e-15)
    loop = field.v1 + field.v2 + field.v3 + field.v4
    assert np.abs(loop).max() <= 1e-9


def test_vector_field_coincident_eyes_rejected():
    with pytest.raises(InputError, match="inter-ocular"):
        FaceLandmarks(
            right_eye=(1.0, 1.0),
            left_eye=(1.0, 1.0),
            mouth_left=(2.0, 2.0),
            mouth_right=(0.0, 2.0),
            nose=(1.0, 1.5),
        )


@settings(max_examples=200, deadline=None)
@given(landmark_sets())
def test_vector_field_closed_loop(lm):
    field = vector_field(lm)
    loop = field.v1 + field.v2 + field.v3 + field.v4
    assert np.abs(loop).max() <= 1e-9
    assert abs(np.linalg.norm(field.v1) - 1.0) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(
    landmark_sets(),
    st.floats(min_value=0.05, max_value=20.0, allow_nan=False),
    st.floats(min_value=-500.0, max_value=500.0, allow_nan=False),
    st.floats(min_value=-500.0, max_value=500.0, allow_nan=False),
)
def test_vector_field_scale_and_translation_invariance(lm, scale, dx, dy):
    shift = np.array([dx, dy])
    moved = FaceLandmarks(
        right_eye=lm.right_eye * scale + shift,
        left_eye=lm.left_eye * scale + shift,
        mouth_left=lm.mouth_left * scale + shift,
        mouth_right=lm.mouth_right * scale + shift,
        nose=lm.nose * scale + shift,
    )
    base = vector_field(lm).stacked()
    transformed = vector_field(moved).stacked()
    assert np.abs(base - transformed).max() <= 1e-9


def test_vector_field_invariants_enforced():
    with pytest.raises(InputError, match="closed quadrilateral"):
        FaceVectorField(
            v1=(1.0, 0.0), v2=(0.0, 1.0), v3=(-1.0, 0.0), v4=(0.5, -1.0), v5=(0.0, 0.5)
        )
    with pytest.raises(InputError, match="unit length"):
        FaceVectorField(
            v1=(2.0, 0.0), v2=(0.0, 1.0), v3=(-2.0, 0.0), v4=(0.0, -1.0), v5=(0.0, 0.5)
        )


# --- similarity ---


def test_similarity_identical_fields_hits_delta_cap():
    field = vector_field(FaceLandmarks(**SQUARE))
    assert orientation_similarity(field, field) == pytest.approx(1.0 / SIMILARITY_DELTA)


def test_similarity_half_unit_perturbation():
    field = vector_field(FaceLandmarks(**SQUARE))
    other = FaceVectorField(
        v1=field.v1,
        v2=field.v2,
        v3=field.v3,
        v4=field.v4,
        v5=field.v5 + np.array([0.5, 0.0]),
    )
    value = orientation_similarity(field, other)
    assert value == pytest.approx(1.0 / (0.5 + SIMILARITY_DELTA), abs=1e-9)
    assert value == pytest.approx(2.0, abs=1e-7)


def test_similarity_symmetric_and_self_maximal():
    rng = np.random.default_rng(41)
    fields = []
    for _ in range(6):
        pts = {k: np.array(v) + rng.uniform(-0.2, 0.2, 2) for k, v in SQUARE.items()}
        fields.append(vector_field(FaceLandmarks(**pts)))
    for a in fields:
        for b in fields:
            assert orientation_similarity(a, b) == orientation_similarity(b, a)
            assert orientation_similarity(a, b) > 0
            assert orientation_similarity(a, a) >= orientation_similarity(a, b)


# --- retrieval ---


def _field_with_nose(offset):
    pts = dict(SQUARE)
    pts["nose"] = (1.0 + offset, 1.0)
    return vector_field(FaceLandmarks(**pts))


def test_top_m_ordering():
    query = vector_field(FaceLandmarks(**SQUARE))
    database = [
        ("far", _field_with_nose(2.0)),      # similarity 1/1.0
        ("near", _field_with_nose(0.4)),     # similarity 1/0.2
        ("mid", _field_with_nose(1.0)),      # similarity 1/0.5
    ]
    top = top_m_candidates(query, database, 2)
    assert [c.frame_id for c in top.candidates] == ["near", "mid"]
    assert top.candidates[0].similarity == pytest.approx(5.0, rel=1e-6)
    assert top.candidates[1].similarity == pytest.approx(2.0, rel=1e-6)
    assert not top.incomplete


def test_top_m_exact_match_wins():
    query = vector_field(FaceLandmarks(**SQUARE))
    database = [("other", _field_with_nose(0.5)), ("same", query)]
    top = top_m_candidates(query, database, 1)
    assert top.candidates[0].frame_id == "same"
    assert top.candidates[0].similarity == pytest.approx(1.0 / SIMILARITY_DELTA)


def test_top_m_requests_beyond_database():
    query = vector_field(FaceLandmarks(**SQUARE))
    database = [(f"f{i}", _field_with_nose(0.1 * (i + 1))) for i in range(3)]
    top = top_m_candidates(query, database, 5)
    assert len(top.candidates) == 3
    assert top.incomplete


def test_top_m_deterministic_total_order():
    rng = np.random.default_rng(42)
    query = vector_field(FaceLandmarks(**SQUARE))
    database = [(f"f{i}", _field_with_nose(0.05 * i)) for i in range(10)]
    # duplicated fields force tie-breaking on the frame id
    database += [("a_dup", database[3][1]), ("z_dup", database[3][1])]
    baseline = top_m_candidates(query, database, 6)
    for _ in range(5):
        shuffled = list(database)
        rng.shuffle(shuffled)
        again = top_m_candidates(query, shuffled, 6)
        assert [c.frame_id for c in again.candidates] == [
            c.frame_id for c in baseline.candidates
        ]


def test_top_m_validation():
    query = vector_field(FaceLandmarks(**SQUARE))
    with pytest.raises(InputError, match="empty"):
        top_m_candidates(query, [], 1)
    with pytest.raises(InputError, match="m must be"):
        top_m_candidates(query, [("a", query)], 0)


# --- blending ---


def constant_image(value, shape=(4, 5, 3)):
    return RasterImage(np.full(shape, value, dtype=np.uint8))


def test_blend_simple_average():
    out = blend_face(
        [constant_image(100)],
        constant_image(200),
        BlendWeights(alpha=0.5, beta=0.5, lambdas=(1.0,)),
    )
    assert np.all(out.pixels == 150)


def test_blend_identity_is_bit_exact():
    rng = np.random.default_rng(43)
    generated = RasterImage(rng.integers(0, 256, (7, 9, 3)).astype(np.uint8))
    candidates = [RasterImage(rng.integers(0, 256, (7, 9, 3)).astype(np.uint8))]
    out = blend_face(
        candidates, generated, BlendWeights(alpha=0.0, beta=1.0, lambdas=(0.7,))
    )
    np.testing.assert_array_equal(out.pixels, generated.pixels)


def test_blend_rounds_half_up():
    out, clamped = blend_face(
        [constant_image(0), constant_image(255)],
        constant_image(0),
        BlendWeights(alpha=1.0, beta=0.0, lambdas=(0.5, 0.5)),
        with_clamp_count=True,
    )
    assert np.all(out.pixels == 128)  # 127.5 rounds half-up
    assert clamped == 0


def test_blend_clamp_counting():
    weights = BlendWeights(alpha=2.0, beta=-1.0, lambdas=(1.0,))
    out, clamped = blend_face(
        [constant_image(255)], constant_image(0), weights, with_clamp_count=True
    )
    assert np.all(out.pixels == 255)
    assert clamped == out.pixels.size


def test_blend_weight_invariant():
    BlendWeights(alpha=0.5, beta=0.5, lambdas=(0.6, 0.4))
    with pytest.raises(InputError, match="must be 1"):
        BlendWeights(alpha=0.5, beta=0.5, lambdas=(0.6, 0.6))
    with pytest.raises(InputError, match="nonnegative"):
        BlendWeights(alpha=1.0, beta=0.0, lambdas=(1.5, -0.5))
    default = BlendWeights.default(4)
    assert default.alpha == 0.5 and default.beta == 0.5
    assert default.lambdas == (0.25,) * 4


def test_blend_shape_checks():
    weights = BlendWeights(alpha=0.5, beta=0.5, lambdas=(1.0,))
    with pytest.raises(DimensionMismatchError):
        blend_face([constant_image(1, (3, 3, 3))], constant_image(1), weights)
    with pytest.raises(InputError, match="lambda"):
        blend_face([constant_image(1), constant_image(1)], constant_image(1), weights)


# --- JSON I/O ---


def test_landmark_json_round_trip(tmp_path):
    obj = {"frame_id": "f7", **{k: list(v) for k, v in SQUARE.items()}}
    (tmp_path / "lm.json").write_text(json.dumps(obj))
    lm = load_landmarks(tmp_path / "lm.json")
    assert lm.frame_id == "f7"
    np.testing.assert_array_equal(lm.nose, [1.0, 1.0])

    (tmp_path / "db.json").write_text(json.dumps([obj, {**obj, "frame_id": "f8"}]))
    db = load_landmark_database(tmp_path / "db.json")
    assert [lm.frame_id for lm in db] == ["f7", "f8"]


def test_landmark_json_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(InputError, match="invalid JSON"):
        load_landmarks(tmp_path / "bad.json")
    (tmp_path / "missing.json").write_text(json.dumps({"frame_id": "x"}))
    with pytest.raises(InputError, match="missing keys"):
        load_landmarks(tmp_path / "missing.json")
    (tmp_path / "notlist.json").write_text(json.dumps({"frame_id": "x"}))
    with pytest.raises(InputError, match="JSON array"):
        load_landmark_database(tmp_path / "notlist.json")
    with pytest.raises(InputError, match="not found"):
        load_landmarks(tmp_path / "absent.json")
