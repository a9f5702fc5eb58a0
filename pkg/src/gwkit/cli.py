"""Command-line interface: every operation behind a stable subcommand.

Numerical results go to stdout as JSON with 12 significant digits; warnings
and errors go to stderr. Exit codes: 0 success, 1 input error, 2 numerical
failure (non-convergence beyond tolerance), 3 partial batch failure.

Solver defaults may be set in a flat key=value config file, selected with
--config or the GWKIT_CONFIG environment variable; flags override the file,
the file overrides built-ins.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from ._jsonfmt import format_json
from .compositing import apply_residual, crop_part, load_part_rects, paste_crop
from .compositing import fuse as fuse_images
from .compositing import psnr as psnr_metric
from .compositing import ssim as ssim_metric
from .core import (
    SolverConfig,
    intra_costs,
    load_distribution,
    load_feature_batch,
    load_image,
    load_mask,
    load_matrix,
    load_residual,
    save_image,
    save_matrix,
    uniform_distribution,
)
from .errors import InputError, NumericalError
from .facegeom import (
    BlendWeights,
    blend_face,
    load_landmark_database,
    load_landmarks,
    top_m_candidates,
    vector_field,
)
from .gromov import default_gw_epsilon, gw_solve
from .losses import (
    LOCAL,
    SPATIAL,
    TEMPORAL,
    combined_loss,
    load_score_records,
    local_refinement_loss,
    spatial_loss,
    split_by_context,
    temporal_loss,
)
from .pipeline import load_manifests, process_sequence
from .sinkhorn import default_epsilon, sinkhorn_solve

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_PARTIAL = 3

SCHEMA_VERSION = 1

#: GW cost contraction is O(n^3) per outer iteration; warn past this size.
SIZE_WARNING = 4096

_CONFIG_KEYS = (
    "epsilon",
    "max_outer",
    "max_sinkhorn",
    "tol",
    "log_domain",
    "top_m",
    "alpha",
    "beta",
    "lambdas",
    "jobs",
)


class _UsageError(Exception):
    def __init__(self, parser, message):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(self, message)


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _emit(payload: dict) -> None:
    print(format_json(payload))


def _load_config_file(path: str | None) -> dict[str, str]:
    if path is None:
        path = os.environ.get("GWKIT_CONFIG")
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise InputError(f"bad config line {lineno} in {p}: {stripped!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise InputError(f"unknown config key {key!r} at line {lineno} in {p}")
        values[key] = value.strip()
    return values


def _conf(config: dict, key: str, cast):
    if key not in config:
        return None
    try:
        return cast(config[key])
    except ValueError:
        raise InputError(f"bad config value for {key!r}: {config[key]!r}") from None


def _parse_log_domain(value: str) -> bool | None:
    table = {"auto": None, "on": True, "off": False}
    if value not in table:
        raise InputError(f"log_domain must be auto, on, or off, got {value!r}")
    return table[value]


def _parse_lambdas(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in value.split(","))
    except ValueError:
        raise InputError(f"lambdas must be comma-separated reals, got {value!r}") from None


def _pick(flag_value, config, key, cast, default):
    if flag_value is not None:
        return flag_value
    from_file = _conf(config, key, cast)
    return default if from_file is None else from_file


def _solver_config(args, config, default_eps) -> SolverConfig:
    epsilon = _pick(args.epsilon, config, "epsilon", float, None)
    if epsilon is None:
        epsilon = default_eps()
    return SolverConfig(
        epsilon=epsilon,
        max_outer_iters=_pick(
            getattr(args, "max_outer", None), config, "max_outer", int, 200
        ),
        max_sinkhorn_iters=_pick(args.max_sinkhorn, config, "max_sinkhorn", int, 10000),
        marginal_tol=_pick(args.tol, config, "tol", float, 1e-9),
        log_domain=_pick(args.log_domain, config, "log_domain", _parse_log_domain, None),
    )


def _blend_weights(args, config, n_candidates: int) -> BlendWeights:
    alpha = _pick(args.alpha, config, "alpha", float, None)
    beta = _pick(args.beta, config, "beta", float, None)
    lambdas = _pick(args.lambdas, config, "lambdas", _parse_lambdas, None)
    if alpha is None and beta is None and lambdas is None:
        return BlendWeights.default(n_candidates)
    if alpha is None or beta is None or lambdas is None:
        raise InputError("alpha, beta, and lambdas must be given together")
    return BlendWeights(alpha=alpha, beta=beta, lambdas=lambdas)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_sinkhorn(args, config) -> int:
    cost = load_matrix(args.cost)
    if max(cost.shape) > SIZE_WARNING:
        _warn(f"instance size {max(cost.shape)} exceeds {SIZE_WARNING}; expect slow solves")
    mu = load_distribution(args.mu) if args.mu else uniform_distribution(cost.shape[0])
    nu = load_distribution(args.nu) if args.nu else uniform_distribution(cost.shape[1])
    cfg = _solver_config(args, config, lambda: default_epsilon(cost))
    coupling, state = sinkhorn_solve(cost, mu, nu, cfg, with_state=True)
    if args.out:
        save_matrix(coupling.plan, args.out)
    _emit(
        {
            "schema_version": SCHEMA_VERSION,
            "n": cost.shape[0],
            "m": cost.shape[1],
            "epsilon": cfg.epsilon,
            "log_domain": state.log_domain,
            "iterations": state.iterations,
            "marginal_error": state.marginal_error,
            "converged": state.converged,
            "coupling": coupling.plan,
        }
    )
    return EXIT_OK if state.converged else EXIT_NUMERICAL


def _cmd_gw(args, config) -> int:
    x = load_feature_batch(args.x)
    y = load_feature_batch(args.y)
    if max(x.n, y.n) > SIZE_WARNING:
        _warn(f"batch size {max(x.n, y.n)} exceeds {SIZE_WARNING}; expect slow solves")
    mu = load_distribution(args.mu) if args.mu else uniform_distribution(x.n)
    nu = load_distribution(args.nu) if args.nu else uniform_distribution(y.n)
    cx = intra_costs(x)
    cy = intra_costs(y)
    cfg = _solver_config(args, config, lambda: default_gw_epsilon(cx, cy, mu, nu))
    result = gw_solve(x, y, mu, nu, cfg)
    if args.out:
        save_matrix(result.coupling.plan, args.out)
    _emit(
        {
            "schema_version": SCHEMA_VERSION,
            "n": x.n,
            "m": y.n,
            "epsilon": cfg.epsilon,
            "transport_cost": result.transport_cost,
            "entropic_objective": result.entropic_objective,
            "outer_iterations": result.outer_iterations,
            "converged": result.converged,
            "coupling": result.coupling.plan,
        }
    )
    return EXIT_OK if result.converged else EXIT_NUMERICAL


def _cmd_face_search(args, config) -> int:
    query = vector_field(load_landmarks(args.query))
    database = [
        (lm.frame_id, vector_field(lm)) for lm in load_landmark_database(args.database)
    ]
    top_m = _pick(args.top_m, config, "top_m", int, 3)
    matches = top_m_candidates(query, database, top_m)
    _emit(
        {
            "schema_version": SCHEMA_VERSION,
            "matches": [
                {"frame_id": c.frame_id, "similarity": c.similarity}
                for c in matches.candidates
            ],
            "incomplete": matches.incomplete,
        }
    )
    if matches.incomplete:
        _warn(f"database holds fewer than {top_m} candidates")
    return EXIT_OK


def _cmd_face_blend(args, config) -> int:
    generated = load_image(args.generated)
    candidates = [load_image(p) for p in args.candidates]
    weights = _blend_weights(args, config, len(candidates))
    blended, clamped = blend_face(candidates, generated, weights, with_clamp_count=True)
    save_image(blended, args.out)
    _emit({"schema_version": SCHEMA_VERSION, "out": str(args.out), "clamped": clamped})
    return EXIT_OK


def _parse_residual_specs(specs) -> dict[int, str]:
    residuals: dict[int, str] = {}
    for spec in specs or []:
        part_str, sep, path = spec.partition("=")
        if not sep or not path:
            raise InputError(f"residual spec must look like PART=PATH, got {spec!r}")
        try:
            part = int(part_str)
        except ValueError:
            raise InputError(f"residual part index must be an integer, got {part_str!r}") from None
        if part in residuals:
            raise InputError(f"duplicate residual for part {part}")
        residuals[part] = path
    return residuals


def _cmd_compose(args, config) -> int:
    frame = load_image(args.frame)
    rects = load_part_rects(args.crops, args.frame_id)
    residuals = _parse_residual_specs(args.residual)
    clamp_counts: dict[str, int] = {}
    for part in sorted(residuals):
        if part not in rects:
            raise InputError(f"no crop rectangle for part {part}")
        crop = crop_part(frame, part, *rects[part])
        refined, clamped = apply_residual(
            crop, load_residual(residuals[part]), with_clamp_count=True
        )
        clamp_counts[f"residual_{part}"] = clamped
        frame = paste_crop(frame, refined)
    save_image(frame, args.out)
    _emit(
        {
            "schema_version": SCHEMA_VERSION,
            "out": str(args.out),
            "parts": sorted(residuals),
            "clamp_counts": clamp_counts,
        }
    )
    return EXIT_OK


def _cmd_fuse(args, config) -> int:
    fused = fuse_images(load_image(args.fg), load_image(args.bg), load_mask(args.mask))
    save_image(fused, args.out)
    _emit({"schema_version": SCHEMA_VERSION, "out": str(args.out)})
    return EXIT_OK


def _cmd_metrics(args, config) -> int:
    ref = load_image(args.ref)
    test = load_image(args.test)
    _emit(
        {
            "schema_version": SCHEMA_VERSION,
            "ssim": ssim_metric(ref, test),
            "psnr": psnr_metric(ref, test),
        }
    )
    return EXIT_OK


def _cmd_loss(args, config) -> int:
    records = load_score_records(args.scores)
    groups = split_by_context(records)
    values: dict[str, float] = {}
    if SPATIAL in groups:
        values["spatial"] = spatial_loss(groups[SPATIAL])
    if TEMPORAL in groups:
        values["temporal"] = temporal_loss(groups[TEMPORAL])
    if LOCAL in groups:
        values["local_refinement"] = local_refinement_loss(groups[LOCAL])
    if args.gw_value is not None:
        values["gw"] = args.gw_value
    weights = {}
    for name, flag in (
        ("spatial", args.w_spatial),
        ("temporal", args.w_temporal),
        ("local_refinement", args.w_local),
        ("gw", args.w_gw),
    ):
        if flag is not None:
            if name not in values:
                raise InputError(f"weight given for absent loss term {name!r}")
            weights[name] = flag
    payload: dict = {"schema_version": SCHEMA_VERSION}
    for name in ("spatial", "temporal", "local_refinement", "gw"):
        payload[name] = values.get(name)
    payload["combined"] = combined_loss(values, weights)
    _emit(payload)
    return EXIT_OK


def _cmd_pipeline(args, config) -> int:
    manifests = load_manifests(args.manifest)
    top_m = _pick(args.top_m, config, "top_m", int, 3)
    jobs = _pick(args.jobs, config, "jobs", int, 1)
    alpha = _pick(args.alpha, config, "alpha", float, None)
    beta = _pick(args.beta, config, "beta", float, None)
    lambdas = _pick(args.lambdas, config, "lambdas", _parse_lambdas, None)
    weights = None
    if not (alpha is None and beta is None and lambdas is None):
        if alpha is None or beta is None or lambdas is None:
            raise InputError("alpha, beta, and lambdas must be given together")
        weights = BlendWeights(alpha=alpha, beta=beta, lambdas=lambdas)
    summary = process_sequence(
        manifests, out_dir=args.out_dir, weights=weights, top_m=top_m, jobs=jobs
    )
    _emit(summary)
    if summary["n_failed"]:
        _warn(f"{summary['n_failed']} of {summary['n_frames']} frames failed")
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def _add_solver_flags(sub, outer: bool) -> None:
    sub.add_argument("--epsilon", type=float, help="entropic regularization")
    if outer:
        sub.add_argument("--max-outer", dest="max_outer", type=int, help="outer iteration cap")
    sub.add_argument(
        "--max-sinkhorn", dest="max_sinkhorn", type=int, help="Sinkhorn iteration cap"
    )
    sub.add_argument("--tol", type=float, help="marginal feasibility tolerance")
    sub.add_argument(
        "--log-domain",
        dest="log_domain",
        choices=("auto", "on", "off"),
        help="log-domain solver selection (default auto)",
    )


def _add_blend_flags(sub) -> None:
    sub.add_argument("--alpha", type=float, help="candidate-sum weight")
    sub.add_argument("--beta", type=float, help="generated-image weight")
    sub.add_argument(
        "--lambdas", type=_parse_lambdas, help="comma-separated per-candidate weights"
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="gwkit", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value config file (or set GWKIT_CONFIG)")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    sub = commands.add_parser("sinkhorn", help="entropic OT between two distributions")
    sub.add_argument("--cost", required=True, help="cost matrix CSV")
    sub.add_argument("--mu", help="row marginal CSV (default uniform)")
    sub.add_argument("--nu", help="column marginal CSV (default uniform)")
    _add_solver_flags(sub, outer=False)
    sub.add_argument("--out", help="write the coupling to this CSV")
    sub.set_defaults(handler=_cmd_sinkhorn)

    sub = commands.add_parser("gw", help="entropic Gromov-Wasserstein between batches")
    sub.add_argument("--x", required=True, help="first feature batch CSV")
    sub.add_argument("--y", required=True, help="second feature batch CSV")
    sub.add_argument("--mu", help="first marginal CSV (default uniform)")
    sub.add_argument("--nu", help="second marginal CSV (default uniform)")
    _add_solver_flags(sub, outer=True)
    sub.add_argument("--out", help="write the coupling to this CSV")
    sub.set_defaults(handler=_cmd_gw)

    sub = commands.add_parser("face-search", help="rank faces by orientation similarity")
    sub.add_argument("--query", required=True, help="query landmarks JSON")
    sub.add_argument("--database", required=True, help="landmark database JSON array")
    sub.add_argument("--top-m", dest="top_m", type=int, help="number of candidates")
    sub.set_defaults(handler=_cmd_face_search)

    sub = commands.add_parser("face-blend", help="blend candidate faces into a generated face")
    sub.add_argument("--generated", required=True, help="generated face PNG")
    sub.add_argument("--candidates", required=True, nargs="+", help="candidate face PNGs")
    _add_blend_flags(sub)
    sub.add_argument("--out", required=True, help="output PNG")
    sub.set_defaults(handler=_cmd_face_blend)

    sub = commands.add_parser("compose", help="apply part residuals and paste them back")
    sub.add_argument("--frame", required=True, help="frame PNG")
    sub.add_argument("--crops", required=True, help="crop rectangles JSON")
    sub.add_argument("--frame-id", dest="frame_id", help="frame id within the crops file")
    sub.add_argument(
        "--residual",
        action="append",
        metavar="PART=PATH",
        help="residual PNG for one part (repeatable)",
    )
    sub.add_argument("--out", required=True, help="output PNG")
    sub.set_defaults(handler=_cmd_compose)

    sub = commands.add_parser("fuse", help="mask-select foreground over background")
    sub.add_argument("--fg", required=True, help="foreground PNG")
    sub.add_argument("--bg", required=True, help="background PNG")
    sub.add_argument("--mask", required=True, help="binary mask PNG")
    sub.add_argument("--out", required=True, help="output PNG")
    sub.set_defaults(handler=_cmd_fuse)

    sub = commands.add_parser("metrics", help="SSIM and PSNR between two images")
    sub.add_argument("--ref", required=True, help="reference PNG")
    sub.add_argument("--test", required=True, help="test PNG")
    sub.set_defaults(handler=_cmd_metrics)

    sub = commands.add_parser("loss", help="adversarial losses over a score file")
    sub.add_argument("--scores", required=True, help="scores CSV")
    sub.add_argument("--gw-value", dest="gw_value", type=float, help="externally computed GW term")
    sub.add_argument("--w-spatial", dest="w_spatial", type=float, help="spatial weight")
    sub.add_argument("--w-temporal", dest="w_temporal", type=float, help="temporal weight")
    sub.add_argument("--w-local", dest="w_local", type=float, help="local refinement weight")
    sub.add_argument("--w-gw", dest="w_gw", type=float, help="GW term weight")
    sub.set_defaults(handler=_cmd_loss)

    sub = commands.add_parser("pipeline", help="batch-process frame manifests")
    sub.add_argument("--manifest", required=True, help="manifest JSON array")
    sub.add_argument("--out-dir", dest="out_dir", required=True, help="output directory")
    sub.add_argument("--jobs", type=int, help="parallel frame workers (default 1)")
    sub.add_argument("--top-m", dest="top_m", type=int, help="candidate faces per frame")
    _add_blend_flags(sub)
    sub.set_defaults(handler=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "handler", None) is None:
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required", file=sys.stderr)
        return EXIT_INPUT
    try:
        config = _load_config_file(args.config)
        if isinstance(getattr(args, "log_domain", None), str):
            args.log_domain = _parse_log_domain(args.log_domain)
        return args.handler(args, config)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
