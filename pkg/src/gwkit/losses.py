"""Adversarial objective values over externally supplied discriminator scores.

Each loss realizes an expectation as the arithmetic mean over the provided
batch: mean log(real) + mean log(1 - fake), maximized at zero when the
discriminator is perfect. Log arguments are floored at 1e-12 so boundary
scores stay finite.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import InputError

SPATIAL = "spatial"
TEMPORAL = "temporal"
LOCAL = "local"

CLAMP_FLOOR = 1e-12


@dataclass(frozen=True)
class ScoreRecord:
    """One discriminator evaluation: P(real | real input) and P(real | fake input).

    ``context`` is one of 'spatial', 'temporal', or 'local'; local records
    carry the body-part index 1..5 (1 = enhanced face).
    """

    real_score: float
    fake_score: float
    context: str
    part_index: int | None = None

    def __post_init__(self):
        if self.context not in (SPATIAL, TEMPORAL, LOCAL):
            raise InputError(f"unknown score context {self.context!r}")
        if self.context == LOCAL:
            if self.part_index not in (1, 2, 3, 4, 5):
                raise InputError(
                    f"local score needs a part index 1..5, got {self.part_index!r}"
                )
        elif self.part_index is not None:
            raise InputError(f"{self.context} scores must not carry a part index")
        for name in ("real_score", "fake_score"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
                raise InputError(f"{name} must lie in [0, 1], got {v!r}")


def _batch_term(records: Sequence[ScoreRecord]) -> float:
    real = sum(math.log(max(r.real_score, CLAMP_FLOOR)) for r in records) / len(records)
    fake = sum(math.log(max(1.0 - r.fake_score, CLAMP_FLOOR)) for r in records) / len(records)
    return real + fake


def _require(records: Sequence[ScoreRecord], context: str) -> None:
    if not records:
        raise InputError(f"empty {context} score batch")
    wrong = [r.context for r in records if r.context != context]
    if wrong:
        raise InputError(f"expected only {context} records, found {wrong[0]!r}")


def spatial_loss(records: Sequence[ScoreRecord]) -> float:
    """Frame-quality objective: mean log(real) + mean log(1 - fake)."""
    _require(records, SPATIAL)
    return _batch_term(records)


def temporal_loss(records: Sequence[ScoreRecord]) -> float:
    """Same structure as the spatial loss, over frame-triplet scores."""
    _require(records, TEMPORAL)
    return _batch_term(records)


def local_refinement_loss(records: Sequence[ScoreRecord]) -> float:
    """Sum of per-part batch terms over whichever parts are present."""
    _require(records, LOCAL)
    groups: dict[int, list[ScoreRecord]] = defaultdict(list)
    for r in records:
        groups[r.part_index].append(r)
    return sum(_batch_term(groups[part]) for part in sorted(groups))


def combined_loss(
    values: Mapping[str, float], weights: Mapping[str, float] | None = None
) -> float:
    """Weighted sum of loss terms; every weight defaults to 1.0.

    The combination weighting is a user knob, not a prescribed recipe.
    """
    if not values:
        raise InputError("no loss terms to combine")
    weights = weights or {}
    unknown = set(weights) - set(values)
    if unknown:
        raise InputError(f"weights given for absent terms: {sorted(unknown)}")
    return sum(weights.get(name, 1.0) * value for name, value in values.items())


def load_score_records(path) -> list[ScoreRecord]:
    """Load scores from CSV rows: context,part_index,real_score,fake_score.

    ``part_index`` is empty for spatial/temporal rows. A header row matching
    the field names is tolerated and skipped.
    """
    p = Path(path)
    if not p.is_file():
        raise InputError(f"scores file not found: {p}")
    records: list[ScoreRecord] = []
    with p.open(newline="", encoding="utf-8") as handle:
        for lineno, row in enumerate(csv.reader(handle), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = [cell.strip() for cell in row]
            if lineno == 1 and cells[0].lower() == "context":
                continue
            if len(cells) != 4:
                raise InputError(
                    f"expected 4 columns at line {lineno} in {p}, got {len(cells)}"
                )
            context, part, real, fake = cells
            try:
                record = ScoreRecord(
                    real_score=float(real),
                    fake_score=float(fake),
                    context=context,
                    part_index=int(part) if part else None,
                )
            except ValueError as exc:
                raise InputError(f"bad score row at line {lineno} in {p}: {exc}") from None
            records.append(record)
    if not records:
        raise InputError(f"no score rows in {p}")
    return records


def split_by_context(records: Iterable[ScoreRecord]) -> dict[str, list[ScoreRecord]]:
    """Group records by context, preserving input order within each group."""
    groups: dict[str, list[ScoreRecord]] = {}
    for r in records:
        groups.setdefault(r.context, []).append(r)
    return groups
