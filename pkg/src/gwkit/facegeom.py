"""Face-orientation vector fields, similarity search, and candidate blending.

Orientation is encoded by five landmark-difference vectors, all divided by
the inter-ocular distance so faces of different sizes compare by orientation
alone. In-plane tilt is deliberately kept: it is genuine orientation signal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import RasterImage, _readonly
from .errors import DimensionMismatchError, InputError

#: Guard added to the similarity denominator so identical fields stay finite.
SIMILARITY_DELTA = 1e-8


def _point(value, name: str) -> np.ndarray:
    p = np.asarray(value, dtype=np.float64)
    if p.shape != (2,):
        raise InputError(f"{name} must be a 2-D point, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InputError(f"{name} has non-finite coordinates")
    return _readonly(p.copy())


@dataclass(frozen=True)
class FaceLandmarks:
    """The five facial keypoints, in pixel coordinates."""

    right_eye: np.ndarray
    left_eye: np.ndarray
    mouth_left: np.ndarray
    mouth_right: np.ndarray
    nose: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        for name in ("right_eye", "left_eye", "mouth_left", "mouth_right", "nose"):
            object.__setattr__(self, name, _point(getattr(self, name), name))
        if float(np.linalg.norm(self.left_eye - self.right_eye)) == 0.0:
            raise InputError(
                f"coincident eyes in landmarks {self.frame_id!r}: "
                "inter-ocular distance must be positive"
            )


@dataclass(frozen=True)
class FaceVectorField:
    """Five inter-ocular-normalized orientation vectors.

    v1..v4 traverse the eye-mouth quadrilateral (right eye -> left eye ->
    left mouth corner -> right mouth corner -> right eye), so they sum to
    zero; v5 points from the eye center to the nose.
    """

    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    v4: np.ndarray
    v5: np.ndarray

    def __post_init__(self):
        for name in ("v1", "v2", "v3", "v4", "v5"):
            object.__setattr__(self, name, _point(getattr(self, name), name))
        loop = self.v1 + self.v2 + self.v3 + self.v4
        if float(np.abs(loop).max()) > 1e-9:
            raise InputError("v1 + v2 + v3 + v4 must vanish (closed quadrilateral)")
        if abs(float(np.linalg.norm(self.v1)) - 1.0) > 1e-9:
            raise InputError("v1 must have unit length after inter-ocular normalization")

    def stacked(self) -> np.ndarray:
        return np.stack([self.v1, self.v2, self.v3, self.v4, self.v5])


def vector_field(lm: FaceLandmarks) -> FaceVectorField:
    """Build the orientation field from landmarks; scale-invariant by design."""
    iod = float(np.linalg.norm(lm.left_eye - lm.right_eye))
    eye_center = (lm.right_eye + lm.left_eye) / 2.0
    return FaceVectorField(
        v1=(lm.left_eye - lm.right_eye) / iod,
        v2=(lm.mouth_left - lm.left_eye) / iod,
        v3=(lm.mouth_right - lm.mouth_left) / iod,
        v4=(lm.right_eye - lm.mouth_right) / iod,
        v5=(lm.nose - eye_center) / iod,
    )


def orientation_similarity(a: FaceVectorField, b: FaceVectorField) -> float:
    """Inverse total L2 discrepancy of the five vectors, guarded near zero."""
    total = float(np.linalg.norm(a.stacked() - b.stacked(), axis=1).sum())
    return 1.0 / (SIMILARITY_DELTA + total)


class Candidate(NamedTuple):
    frame_id: str
    similarity: float


@dataclass(frozen=True)
class TopMatches:
    """Ranked retrieval result; ``incomplete`` is set when the database held
    fewer entries than requested."""

    candidates: tuple[Candidate, ...]
    incomplete: bool


def top_m_candidates(
    query: FaceVectorField,
    database: Sequence[tuple[str, FaceVectorField]],
    m: int,
) -> TopMatches:
    """The m most similarly oriented database entries, most similar first.

    Ties break by ascending frame id, so the ordering is a total order and
    shuffling the database cannot change the result.
    """
    if m < 1:
        raise InputError(f"m must be >= 1, got {m}")
    if not database:
        raise InputError("candidate database is empty")
    scored = [
        Candidate(frame_id, orientation_similarity(query, field))
        for frame_id, field in database
    ]
    scored.sort(key=lambda c: (-c.similarity, c.frame_id))
    return TopMatches(tuple(scored[:m]), incomplete=len(scored) < m)


@dataclass(frozen=True)
class BlendWeights:
    """Hyperparameters of the candidate blend alpha * sum(lambda_i f_i) + beta * g.

    Constrained to alpha * sum(lambdas) + beta = 1 so the combination is
    affine in pixel space and magnitudes are preserved.
    """

    alpha: float
    beta: float
    lambdas: tuple[float, ...]

    def __post_init__(self):
        lambdas = tuple(float(v) for v in self.lambdas)
        if not lambdas:
            raise InputError("at least one candidate weight is required")
        if any(not np.isfinite(v) or v < 0 for v in lambdas):
            raise InputError("lambdas must be finite and nonnegative")
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise InputError("alpha and beta must be finite")
        combo = self.alpha * sum(lambdas) + self.beta
        if abs(combo - 1.0) > 1e-9:
            raise InputError(
                f"alpha * sum(lambdas) + beta must be 1, got {combo!r}"
            )
        object.__setattr__(self, "lambdas", lambdas)

    @classmethod
    def default(cls, m: int = 3) -> "BlendWeights":
        """Equal candidate weights 1/m with alpha = beta = 0.5."""
        if m < 1:
            raise InputError(f"m must be >= 1, got {m}")
        return cls(alpha=0.5, beta=0.5, lambdas=(1.0 / m,) * m)


def blend_face(
    candidates: Sequence[RasterImage],
    generated: RasterImage,
    weights: BlendWeights,
    *,
    with_clamp_count: bool = False,
):
    """Blend candidate faces into the generated face, per pixel and channel.

    Computes alpha * sum(lambda_i f_i) + beta * generated in real arithmetic,
    rounds half-up, and clamps to [0, 255]. With alpha = 0, beta = 1 the
    result is the generated image, bit-exact.
    """
    if len(candidates) != len(weights.lambdas):
        raise InputError(
            f"got {len(candidates)} candidate images for "
            f"{len(weights.lambdas)} lambda weights"
        )
    for i, face in enumerate(candidates):
        if face.pixels.shape != generated.pixels.shape:
            raise DimensionMismatchError(
                f"candidate {i} has size {face.size}, generated is {generated.size}"
            )
    acc = np.zeros(generated.pixels.shape, dtype=np.float64)
    for lam, face in zip(weights.lambdas, candidates):
        acc += lam * face.pixels
    acc = weights.alpha * acc + weights.beta * generated.pixels
    rounded = np.floor(acc + 0.5)
    clipped = np.clip(rounded, 0.0, 255.0)
    clamped = int(np.count_nonzero(rounded != clipped))
    image = RasterImage(clipped.astype(np.uint8))
    if with_clamp_count:
        return image, clamped
    return image


# ---------------------------------------------------------------------------
# landmark JSON I/O
# ---------------------------------------------------------------------------

_LANDMARK_KEYS = ("right_eye", "left_eye", "mouth_left", "mouth_right", "nose")


def _landmarks_from_obj(obj, source) -> FaceLandmarks:
    if not isinstance(obj, dict):
        raise InputError(f"landmark entry in {source} must be a JSON object")
    missing = [k for k in ("frame_id", *_LANDMARK_KEYS) if k not in obj]
    if missing:
        raise InputError(f"landmark entry in {source} missing keys: {missing}")
    return FaceLandmarks(
        right_eye=obj["right_eye"],
        left_eye=obj["left_eye"],
        mouth_left=obj["mouth_left"],
        mouth_right=obj["mouth_right"],
        nose=obj["nose"],
        frame_id=str(obj["frame_id"]),
    )


def _load_json(path: Path):
    if not path.is_file():
        raise InputError(f"landmark file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {path}: {exc}") from None


def load_landmarks(path) -> FaceLandmarks:
    """Load a single frame's landmarks from JSON."""
    p = Path(path)
    return _landmarks_from_obj(_load_json(p), p)


def load_landmark_database(path) -> list[FaceLandmarks]:
    """Load a JSON array of landmark objects."""
    p = Path(path)
    data = _load_json(p)
    if not isinstance(data, list):
        raise InputError(f"landmark database {p} must be a JSON array")
    return [_landmarks_from_obj(obj, p) for obj in data]
