"""Deterministic per-frame driver: enhance the face, apply part residuals,
paste the parts back, fuse with the background, and score against ground
truth when available. Frames are independent, so a sequence may be processed
with several workers; results merge in frame-id order either way.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ._jsonfmt import format_json
from .compositing import (
    BodyPartCrop,
    apply_residual,
    crop_part,
    fuse,
    load_part_rects,
    paste_crop,
    psnr,
    ssim,
)
from .core import RasterImage, load_image, load_mask, load_residual, save_image
from .errors import GwkitError, InputError, StageError
from .facegeom import (
    BlendWeights,
    blend_face,
    load_landmark_database,
    load_landmarks,
    top_m_candidates,
    vector_field,
)

_SSIM_MIN_SIDE = 11


@dataclass(frozen=True)
class FrameManifest:
    """Asset paths for one frame; optional stages are simply left unset.

    Face enhancement requires ``landmarks``, ``face_database``, ``face_dir``,
    and a part-1 rectangle in ``crops``; residual refinement requires
    ``crops`` plus per-part residual paths.
    """

    frame_id: str
    foreground: Path
    background: Path
    mask: Path
    crops: Path | None = None
    landmarks: Path | None = None
    face_database: Path | None = None
    face_dir: Path | None = None
    residuals: Mapping[int, Path] = field(default_factory=dict)
    ground_truth: Path | None = None

    def __post_init__(self):
        if not self.frame_id:
            raise InputError("manifest entry is missing a frame_id")
        enhance_fields = (self.landmarks, self.face_database, self.face_dir)
        if any(f is not None for f in enhance_fields) and not all(
            f is not None for f in enhance_fields
        ):
            raise InputError(
                f"frame {self.frame_id!r}: landmarks, face_database, and face_dir "
                "must be given together"
            )
        if (self.landmarks is not None or self.residuals) and self.crops is None:
            raise InputError(
                f"frame {self.frame_id!r}: enhancement and residuals require a crops file"
            )
        for part in self.residuals:
            if part not in (1, 2, 3, 4, 5):
                raise InputError(
                    f"frame {self.frame_id!r}: residual part index must be 1..5, got {part}"
                )


def load_manifests(path) -> list[FrameManifest]:
    """Load a JSON array of frame manifests; relative paths resolve against
    the manifest file's directory."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"manifest file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {p}: {exc}") from None
    if not isinstance(data, list) or not data:
        raise InputError(f"manifest {p} must be a non-empty JSON array")
    base = p.parent

    def resolve(entry, key, required=False):
        value = entry.get(key)
        if value is None:
            if required:
                raise InputError(f"manifest entry missing required key {key!r}")
            return None
        return base / str(value)

    manifests = []
    seen = set()
    for entry in data:
        if not isinstance(entry, dict):
            raise InputError(f"manifest entries in {p} must be JSON objects")
        frame_id = str(entry.get("frame_id", ""))
        residuals = {}
        for key, value in (entry.get("residuals") or {}).items():
            try:
                part = int(key)
            except ValueError:
                raise InputError(
                    f"frame {frame_id!r}: residual keys must be part indices, got {key!r}"
                ) from None
            residuals[part] = base / str(value)
        manifest = FrameManifest(
            frame_id=frame_id,
            foreground=resolve(entry, "foreground", required=True),
            background=resolve(entry, "background", required=True),
            mask=resolve(entry, "mask", required=True),
            crops=resolve(entry, "crops"),
            landmarks=resolve(entry, "landmarks"),
            face_database=resolve(entry, "face_database"),
            face_dir=resolve(entry, "face_dir"),
            residuals=residuals,
            ground_truth=resolve(entry, "ground_truth"),
        )
        if manifest.frame_id in seen:
            raise InputError(f"duplicate frame_id {manifest.frame_id!r} in {p}")
        seen.add(manifest.frame_id)
        manifests.append(manifest)
    return manifests


class _StageClock:
    def __init__(self):
        self.timings_ms: dict[str, float] = {}

    def run(self, stage: str, func):
        start = time.perf_counter()
        try:
            result = func()
        except (GwkitError, OSError) as exc:
            raise StageError(stage, exc) from exc
        finally:
            self.timings_ms[stage] = (time.perf_counter() - start) * 1000.0
        return result


def _enhance_face(manifest, rects, foreground, weights, top_m, report):
    if 1 not in rects:
        raise InputError(f"frame {manifest.frame_id!r}: enhancement needs a part-1 rectangle")
    face = crop_part(foreground, 1, *rects[1])
    query = vector_field(load_landmarks(manifest.landmarks))
    database = [
        (lm.frame_id, vector_field(lm))
        for lm in load_landmark_database(manifest.face_database)
    ]
    matches = top_m_candidates(query, database, top_m)
    candidates = [
        load_image(Path(manifest.face_dir) / f"{c.frame_id}.png")
        for c in matches.candidates
    ]
    if weights is None:
        weights = BlendWeights.default(len(candidates))
    blended, clamped = blend_face(candidates, face.image, weights, with_clamp_count=True)
    report["similarities"] = [
        {"frame_id": c.frame_id, "similarity": c.similarity} for c in matches.candidates
    ]
    report["incomplete_candidates"] = matches.incomplete
    report["clamp_counts"]["blend"] = clamped
    return BodyPartCrop(
        image=blended,
        part_index=face.part_index,
        origin=face.origin,
        parent_size=face.parent_size,
    )


def process_frame(
    manifest: FrameManifest,
    weights: BlendWeights | None = None,
    top_m: int = 3,
) -> tuple[RasterImage, dict]:
    """Run the full per-frame chain; returns the fused frame and a report.

    Stage failures raise StageError with the stage name; the report carries
    retrieval similarities, clamp counts, optional metrics, and per-stage
    timings (the only nondeterministic fields).
    """
    report: dict = {
        "frame_id": manifest.frame_id,
        "ok": True,
        "enhanced": manifest.landmarks is not None,
        "similarities": [],
        "incomplete_candidates": False,
        "parts_processed": [],
        "clamp_counts": {},
        "metrics": None,
    }
    clock = _StageClock()

    def load_stage():
        foreground = load_image(manifest.foreground)
        background = load_image(manifest.background)
        mask = load_mask(manifest.mask)
        if background.size != foreground.size:
            raise InputError(
                f"background {background.size} does not match foreground {foreground.size}"
            )
        if (mask.width, mask.height) != foreground.size:
            raise InputError(
                f"mask {(mask.width, mask.height)} does not match foreground {foreground.size}"
            )
        rects = (
            load_part_rects(manifest.crops, manifest.frame_id)
            if manifest.crops is not None
            else {}
        )
        return foreground, background, mask, rects

    foreground, background, mask, rects = clock.run("load", load_stage)

    processed: dict[int, object] = {}
    if manifest.landmarks is not None:
        processed[1] = clock.run(
            "enhance",
            lambda: _enhance_face(manifest, rects, foreground, weights, top_m, report),
        )

    def residual_stage():
        for part in sorted(manifest.residuals):
            if part not in rects:
                raise InputError(
                    f"frame {manifest.frame_id!r}: residual for part {part} "
                    "has no crop rectangle"
                )
            crop = processed.get(part)
            if crop is None:
                crop = crop_part(foreground, part, *rects[part])
            residual = load_residual(manifest.residuals[part])
            refined, clamped = apply_residual(crop, residual, with_clamp_count=True)
            report["clamp_counts"][f"residual_{part}"] = clamped
            processed[part] = refined

    clock.run("residuals", residual_stage)

    def paste_stage():
        frame = foreground
        for part in sorted(processed):
            frame = paste_crop(frame, processed[part])
        return frame

    frame = clock.run("paste", paste_stage)
    report["parts_processed"] = sorted(processed)

    fused = clock.run("fuse", lambda: fuse(frame, background, mask))

    if manifest.ground_truth is not None:

        def metrics_stage():
            truth = load_image(manifest.ground_truth)
            values = {"psnr": psnr(truth, fused)}
            if min(truth.width, truth.height) >= _SSIM_MIN_SIDE:
                values["ssim"] = ssim(truth, fused)
            else:
                values["ssim"] = None
            return values

        report["metrics"] = clock.run("metrics", metrics_stage)

    report["timings_ms"] = clock.timings_ms
    return fused, report


def _run_frame(manifest, weights, top_m, out_dir):
    try:
        image, report = process_frame(manifest, weights=weights, top_m=top_m)
    except StageError as exc:
        return {
            "frame_id": manifest.frame_id,
            "ok": False,
            "stage": exc.stage,
            "error": str(exc.cause),
        }
    if out_dir is not None:
        out_path = Path(out_dir) / f"{manifest.frame_id}.png"
        save_image(image, out_path)
        report["output"] = out_path.name
    return report


def process_sequence(
    manifests: list[FrameManifest],
    out_dir=None,
    weights: BlendWeights | None = None,
    top_m: int = 3,
    jobs: int = 1,
) -> dict:
    """Process frames in frame-id order and aggregate the reports.

    Per-frame failures are recorded and do not abort the batch. When
    ``out_dir`` is given, fused frames are written there as
    ``<frame_id>.png`` alongside a ``report.json``.
    """
    if not manifests:
        raise InputError("at least one frame manifest is required")
    if jobs < 1:
        raise InputError(f"jobs must be >= 1, got {jobs}")
    ordered = sorted(manifests, key=lambda m: m.frame_id)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if jobs == 1:
        reports = [_run_frame(m, weights, top_m, out_dir) for m in ordered]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(
                pool.map(lambda m: _run_frame(m, weights, top_m, out_dir), ordered)
            )

    scored = [
        r["metrics"]
        for r in reports
        if r["ok"] and r.get("metrics") is not None
    ]
    aggregate = None
    if scored:
        psnr_values = [m["psnr"] for m in scored]
        ssim_values = [m["ssim"] for m in scored if m["ssim"] is not None]
        aggregate = {
            "psnr": sum(psnr_values) / len(psnr_values),
            "ssim": sum(ssim_values) / len(ssim_values) if ssim_values else None,
        }
    summary = {
        "schema_version": 1,
        "n_frames": len(reports),
        "n_failed": sum(1 for r in reports if not r["ok"]),
        "aggregate": aggregate,
        "frames": reports,
    }
    if out_dir is not None:
        report_path = Path(out_dir) / "report.json"
        report_path.write_text(format_json(summary, indent=2) + "\n", encoding="utf-8")
    return summary
