"""Domain types, validation, and file I/O shared by the solvers and pipeline stages.

Values are immutable after construction: every wrapped numpy array is copied
and marked read-only, so instances can be shared freely across concurrent
solver invocations.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial.distance import cdist

from .errors import DimensionMismatchError, InputError

#: Stored residual sample = true value + this offset, so the signed range
#: [-255, 255] fits an unsigned 16-bit PNG sample.
RESIDUAL_OFFSET = 32768


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# numeric domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureBatch:
    """A batch of n real-valued feature vectors of dimension d.

    Entries must be finite; n >= 1 and d >= 1.
    """

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InputError(
                f"feature batch must be a 2-D array with n >= 1 rows and "
                f"d >= 1 columns, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise InputError("feature batch contains non-finite values")
        object.__setattr__(self, "vectors", _readonly(v.copy()))

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class DiscreteDistribution:
    """Nonnegative probability masses over n points, summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise InputError(f"weights must be a non-empty vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InputError("weights contain non-finite values")
        if np.any(w < 0):
            raise InputError("weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"weights sum to {total!r}, expected 1 within 1e-9")
        object.__setattr__(self, "weights", _readonly(w.copy()))

    @property
    def n(self) -> int:
        return self.weights.size


def uniform_distribution(n: int) -> DiscreteDistribution:
    """The uniform distribution with all n weights equal to 1/n."""
    if n < 1:
        raise InputError(f"distribution size must be >= 1, got {n}")
    return DiscreteDistribution(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class Coupling:
    """A transport plan: nonnegative n x m matrix with prescribed marginals.

    ``marginal_tol`` is the tolerance (total L1 violation, rows plus columns)
    the plan is validated against; solvers pass the tolerance they actually
    achieved, so non-converged best iterates remain representable.
    """

    plan: np.ndarray
    row_marginal: DiscreteDistribution
    col_marginal: DiscreteDistribution
    marginal_tol: float = 1e-6

    def __post_init__(self):
        p = np.asarray(self.plan, dtype=np.float64)
        if p.ndim != 2:
            raise InputError(f"plan must be a 2-D matrix, got shape {p.shape}")
        if p.shape != (self.row_marginal.n, self.col_marginal.n):
            raise DimensionMismatchError(
                f"plan shape {p.shape} does not match marginals "
                f"({self.row_marginal.n}, {self.col_marginal.n})"
            )
        if not np.all(np.isfinite(p)):
            raise InputError("plan contains non-finite values")
        if np.any(p < 0):
            raise InputError("plan entries must be nonnegative")
        err = self._violation(p, self.row_marginal.weights, self.col_marginal.weights)
        if err > self.marginal_tol:
            raise InputError(
                f"plan marginals violated by {err:.3e} (tolerance {self.marginal_tol:.3e})"
            )
        object.__setattr__(self, "plan", _readonly(p.copy()))

    @staticmethod
    def _violation(plan: np.ndarray, mu: np.ndarray, nu: np.ndarray) -> float:
        return float(
            np.abs(plan.sum(axis=1) - mu).sum() + np.abs(plan.sum(axis=0) - nu).sum()
        )

    @property
    def marginal_error(self) -> float:
        """Achieved total L1 marginal violation of the stored plan."""
        return self._violation(
            self.plan, self.row_marginal.weights, self.col_marginal.weights
        )

    def transpose(self) -> "Coupling":
        return Coupling(
            self.plan.T, self.col_marginal, self.row_marginal, self.marginal_tol
        )


@dataclass(frozen=True)
class IntraCostMatrix:
    """Symmetric matrix of pairwise L1 distances within one feature batch."""

    costs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
            raise InputError(f"cost matrix must be square, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InputError("cost matrix contains non-finite values")
        if np.any(c < 0):
            raise InputError("cost matrix entries must be nonnegative")
        if np.any(np.diag(c) != 0):
            raise InputError("cost matrix must have a zero diagonal")
        if np.abs(c - c.T).max() > 1e-12:
            raise InputError("cost matrix must be symmetric within 1e-12")
        object.__setattr__(self, "costs", _readonly(c.copy()))

    @property
    def n(self) -> int:
        return self.costs.shape[0]


def intra_costs(batch: FeatureBatch) -> IntraCostMatrix:
    """All pairwise L1 distances of a batch: costs[i][k] = sum_dim |x_i - x_k|."""
    c = cdist(batch.vectors, batch.vectors, metric="cityblock")
    np.fill_diagonal(c, 0.0)
    return IntraCostMatrix(c)


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the Sinkhorn and Gromov-Wasserstein solvers.

    ``log_domain`` is a three-way switch: True forces the stabilized
    log-domain iteration, False forces the standard scaling iteration, and
    None (the default) picks per instance - log domain whenever the kernel
    exp(-cost/epsilon) would be at risk of underflow.
    """

    epsilon: float
    max_outer_iters: int = 200
    max_sinkhorn_iters: int = 10000
    marginal_tol: float = 1e-9
    log_domain: bool | None = None

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise InputError(f"epsilon must be a positive real, got {self.epsilon!r}")
        if not (math.isfinite(self.marginal_tol) and self.marginal_tol > 0):
            raise InputError(f"marginal_tol must be positive, got {self.marginal_tol!r}")
        if self.max_outer_iters < 1:
            raise InputError("max_outer_iters must be >= 1")
        if self.max_sinkhorn_iters < 1:
            raise InputError("max_sinkhorn_iters must be >= 1")


# ---------------------------------------------------------------------------
# raster types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RasterImage:
    """An 8-bit RGB image stored as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise InputError(f"image pixels must be uint8, got {px.dtype}")
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InputError(
                f"image must have shape (height, width, 3), got {px.shape}"
            )
        object.__setattr__(self, "pixels", _readonly(px.copy()))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


@dataclass(frozen=True)
class Mask:
    """A strictly binary mask; 1 selects the foreground pixel."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.issubdtype(v.dtype, np.integer):
            raise InputError(f"mask values must be integers, got {v.dtype}")
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InputError(f"mask must have shape (height, width), got {v.shape}")
        if not np.isin(v, (0, 1)).all():
            raise InputError("mask values must be strictly 0 or 1")
        object.__setattr__(self, "values", _readonly(v.astype(np.uint8)))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# feature / matrix CSV I/O
# ---------------------------------------------------------------------------


def _parse_csv_matrix(path: Path) -> np.ndarray:
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    text = path.read_text(encoding="utf-8")
    rows: list[list[float]] = []
    width: int | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip() == "":
            raise InputError(f"empty row at line {lineno} in {path}")
        values = []
        for col, token in enumerate(line.split(","), start=1):
            token = token.strip()
            try:
                value = float(token)
            except ValueError:
                raise InputError(
                    f"cannot parse number at line {lineno}, column {col} "
                    f"in {path}: {token!r}"
                ) from None
            if not math.isfinite(value):
                raise InputError(
                    f"non-finite value at line {lineno}, column {col} in {path}"
                )
            values.append(value)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise InputError(
                f"ragged row at line {lineno} in {path}: "
                f"expected {width} values, got {len(values)}"
            )
        rows.append(values)
    if not rows:
        raise InputError(f"no rows in {path}")
    return np.array(rows, dtype=np.float64)


def load_feature_batch(path) -> FeatureBatch:
    """Load a feature batch from CSV: one vector per row, no header."""
    return FeatureBatch(_parse_csv_matrix(Path(path)))


def save_feature_batch(batch: FeatureBatch, path) -> None:
    """Write a batch as CSV with enough digits to round-trip exactly."""
    lines = [",".join(f"{v:.17g}" for v in row) for row in batch.vectors]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_matrix(path) -> np.ndarray:
    """Load a plain numeric matrix (e.g. a cost matrix) from CSV."""
    return _parse_csv_matrix(Path(path))


def save_matrix(matrix: np.ndarray, path) -> None:
    lines = [",".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(matrix)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_distribution(path) -> DiscreteDistribution:
    """Load a distribution from CSV laid out as a single row or column."""
    m = _parse_csv_matrix(Path(path))
    if m.shape[0] != 1 and m.shape[1] != 1:
        raise InputError(
            f"distribution file must be a single row or column, got shape {m.shape}"
        )
    return DiscreteDistribution(m.ravel())


# ---------------------------------------------------------------------------
# PNG I/O (8-bit images and masks via Pillow)
# ---------------------------------------------------------------------------


def load_image(path) -> RasterImage:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"image file not found: {p}")
    with Image.open(p) as im:
        return RasterImage(np.asarray(im.convert("RGB"), dtype=np.uint8))


def save_image(image: RasterImage, path) -> None:
    Image.fromarray(image.pixels, mode="RGB").save(Path(path), format="PNG")


def load_mask(path) -> Mask:
    """Load a mask from a grayscale PNG; pixels above 127 count as 1."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"mask file not found: {p}")
    with Image.open(p) as im:
        gray = np.asarray(im.convert("L"))
    return Mask((gray > 127).astype(np.uint8))


def save_mask(mask: Mask, path) -> None:
    Image.fromarray(mask.values * np.uint8(255), mode="L").save(Path(path), format="PNG")


# ---------------------------------------------------------------------------
# residual image I/O: 16-bit RGB PNG, offset-encoded signed samples
# ---------------------------------------------------------------------------
# Pillow cannot write 48-bit RGB PNGs, so the codec is implemented here
# directly: stored sample = value + RESIDUAL_OFFSET, bit depth 16, color
# type 2. Writing uses filter 0; reading understands all five standard
# filters so externally produced files decode too.

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _png_chunk(tag: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + tag
        + data
        + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
    )


def save_residual(residual: np.ndarray, path) -> None:
    """Write a signed residual image as an offset-encoded 16-bit RGB PNG."""
    r = np.asarray(residual)
    if not np.issubdtype(r.dtype, np.integer):
        raise InputError(f"residual must be an integer array, got {r.dtype}")
    if r.ndim != 3 or r.shape[2] != 3 or r.shape[0] < 1 or r.shape[1] < 1:
        raise InputError(f"residual must have shape (height, width, 3), got {r.shape}")
    if r.min() < -255 or r.max() > 255:
        raise InputError("residual values must lie in [-255, 255]")
    height, width = r.shape[:2]
    samples = (r.astype(np.int32) + RESIDUAL_OFFSET).astype(">u2")
    raw = b"".join(b"\x00" + samples[row].tobytes() for row in range(height))
    ihdr = struct.pack(">IIBBBBB", width, height, 16, 2, 0, 0, 0)
    Path(path).write_bytes(
        _PNG_SIGNATURE
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", zlib.compress(raw, 6))
        + _png_chunk(b"IEND", b"")
    )


def _paeth(left: int, up: int, upleft: int) -> int:
    p = left + up - upleft
    pa, pb, pc = abs(p - left), abs(p - up), abs(p - upleft)
    if pa <= pb and pa <= pc:
        return left
    if pb <= pc:
        return up
    return upleft


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> bytes:
    out = bytearray()
    prev = np.zeros(stride, dtype=np.int32)
    pos = 0
    for _ in range(height):
        ftype = raw[pos]
        pos += 1
        line = np.frombuffer(raw, np.uint8, stride, pos).astype(np.int32)
        pos += stride
        if ftype == 0:
            recon = line
        elif ftype == 2:
            recon = (line + prev) & 0xFF
        elif ftype == 1:
            recon = line.copy()
            for x in range(bpp, stride):
                recon[x] = (recon[x] + recon[x - bpp]) & 0xFF
        elif ftype == 3:
            recon = line.copy()
            for x in range(stride):
                left = recon[x - bpp] if x >= bpp else 0
                recon[x] = (recon[x] + ((left + prev[x]) >> 1)) & 0xFF
        elif ftype == 4:
            recon = line.copy()
            for x in range(stride):
                left = int(recon[x - bpp]) if x >= bpp else 0
                upleft = int(prev[x - bpp]) if x >= bpp else 0
                recon[x] = (recon[x] + _paeth(left, int(prev[x]), upleft)) & 0xFF
        else:
            raise InputError(f"unsupported PNG filter type {ftype}")
        out += recon.astype(np.uint8).tobytes()
        prev = recon
    return bytes(out)


def load_residual(path) -> np.ndarray:
    """Read an offset-encoded 16-bit RGB PNG back into a signed int16 array."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"residual file not found: {p}")
    data = p.read_bytes()
    if not data.startswith(_PNG_SIGNATURE):
        raise InputError(f"not a PNG file: {p}")
    pos = len(_PNG_SIGNATURE)
    ihdr = None
    idat = bytearray()
    while pos + 12 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        tag = data[pos + 4 : pos + 8]
        chunk = data[pos + 8 : pos + 8 + length]
        (crc,) = struct.unpack(">I", data[pos + 8 + length : pos + 12 + length])
        if crc != zlib.crc32(tag + chunk) & 0xFFFFFFFF:
            raise InputError(f"corrupt PNG chunk {tag!r} in {p}")
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", chunk)
        elif tag == b"IDAT":
            idat += chunk
        elif tag == b"IEND":
            break
        pos += 12 + length
    if ihdr is None or not idat:
        raise InputError(f"truncated PNG file: {p}")
    width, height, depth, color, compression, filt, interlace = ihdr
    if (depth, color) != (16, 2):
        raise InputError(
            f"residual PNG must be 16-bit RGB, got bit depth {depth} color type {color}"
        )
    if compression != 0 or filt != 0 or interlace != 0:
        raise InputError(f"unsupported PNG encoding options in {p}")
    stride = width * 6
    raw = zlib.decompress(bytes(idat))
    if len(raw) != height * (stride + 1):
        raise InputError(f"PNG pixel data has unexpected length in {p}")
    recon = _unfilter(raw, height, stride, bpp=6)
    samples = np.frombuffer(recon, dtype=">u2").reshape(height, width, 3)
    values = samples.astype(np.int32) - RESIDUAL_OFFSET
    if values.min() < -255 or values.max() > 255:
        raise InputError(f"decoded residual values outside [-255, 255] in {p}")
    return values.astype(np.int16)
