"""Entropy-regularized linear optimal transport via Sinkhorn matrix scaling.

The standard solver alternates the scaling updates a <- mu/(K b) and
b <- nu/(K^T a) on the Gibbs kernel K = exp(-cost/epsilon) and returns the
coupling diag(a) K diag(b). For small epsilon the kernel underflows, so a
stabilized log-domain variant iterates the dual potentials with logsumexp
instead; by default the solver picks the domain per instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Coupling, DiscreteDistribution, SolverConfig
from .errors import DimensionMismatchError, InputError, KernelUnderflowError

#: Auto-select the log-domain iteration when epsilon < this factor times the
#: largest cost entry, the regime where exp(-cost/epsilon) starts to underflow.
LOG_DOMAIN_EPSILON_FACTOR = 0.05


def gibbs_kernel(cost: np.ndarray, epsilon: float) -> np.ndarray:
    """Elementwise kernel K[i][j] = exp(-cost[i][j] / epsilon)."""
    c = np.asarray(cost, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise InputError("cost matrix contains non-finite values")
    if not epsilon > 0:
        raise InputError(f"epsilon must be positive, got {epsilon!r}")
    return np.exp(-c / epsilon)


def default_epsilon(cost: np.ndarray) -> float:
    """Scale-free default regularization: 0.01 x mean(cost).

    Falls back to 1.0 for an all-zero cost, where any epsilon yields the
    product coupling.
    """
    mean = float(np.mean(np.asarray(cost, dtype=np.float64)))
    return 0.01 * mean if mean > 0 else 1.0


@dataclass(frozen=True)
class SinkhornState:
    """Final scaling state of a Sinkhorn solve.

    ``a``/``b``/``kernel`` are populated by the standard-domain iteration;
    the log-domain iteration reports the dual potentials ``f``/``g`` instead
    (its scalings exp(f/eps), exp(g/eps) may overflow the float range).
    ``error_history`` holds the total L1 marginal violation after each
    completed iteration.
    """

    iterations: int
    marginal_error: float
    converged: bool
    log_domain: bool
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    kernel: np.ndarray | None = None
    f: np.ndarray | None = None
    g: np.ndarray | None = None
    error_history: tuple[float, ...] = field(default_factory=tuple, repr=False)


def use_log_domain(cost: np.ndarray, cfg: SolverConfig) -> bool:
    """Apply cfg.log_domain, resolving the automatic (None) setting."""
    if cfg.log_domain is not None:
        return cfg.log_domain
    top = float(np.max(cost)) if np.size(cost) else 0.0
    return cfg.epsilon < LOG_DOMAIN_EPSILON_FACTOR * top


def _marginal_violation(plan, mu, nu) -> float:
    return float(np.abs(plan.sum(axis=1) - mu).sum() + np.abs(plan.sum(axis=0) - nu).sum())


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    # inline for speed; tolerates all-(-inf) slices (zero-mass marginals)
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(a - top), axis=axis)) + np.squeeze(top, axis=axis)


def _warm_scalings(warm_start, epsilon, n, m):
    """Initial (a, b) for the standard iteration from a previous state."""
    if warm_start is None:
        return np.ones(n), np.ones(m)
    if warm_start.a is not None and warm_start.b is not None:
        a, b = warm_start.a, warm_start.b
    elif warm_start.f is not None and warm_start.g is not None:
        with np.errstate(over="ignore"):
            a = np.exp(warm_start.f / epsilon)
            b = np.exp(warm_start.g / epsilon)
    else:
        return np.ones(n), np.ones(m)
    if (
        a.shape != (n,)
        or b.shape != (m,)
        or not np.all(np.isfinite(a))
        or not np.all(np.isfinite(b))
        or np.any(a <= 0)
        or np.any(b <= 0)
    ):
        return np.ones(n), np.ones(m)
    return a, b


def _warm_potentials(warm_start, epsilon, n, m):
    """Initial (f, g) for the log-domain iteration from a previous state."""
    if warm_start is None:
        return np.zeros(n), np.zeros(m)
    if warm_start.f is not None and warm_start.g is not None:
        f, g = warm_start.f, warm_start.g
    elif warm_start.a is not None and warm_start.b is not None:
        with np.errstate(divide="ignore"):
            f = epsilon * np.log(warm_start.a)
            g = epsilon * np.log(warm_start.b)
    else:
        return np.zeros(n), np.zeros(m)
    if f.shape != (n,) or g.shape != (m,) or np.any(np.isnan(f)) or np.any(np.isnan(g)):
        return np.zeros(n), np.zeros(m)
    return f, g


def _solve_standard(cost, mu, nu, cfg, warm_start=None):
    kernel = gibbs_kernel(cost, cfg.epsilon)
    if np.any(kernel.sum(axis=1) == 0) or np.any(kernel.sum(axis=0) == 0):
        raise KernelUnderflowError(
            "Gibbs kernel underflowed to an all-zero row or column; "
            "use the log-domain solver (log_domain=True)"
        )
    a, b = _warm_scalings(warm_start, cfg.epsilon, mu.size, nu.size)
    history = []
    converged = False
    iterations = 0
    err = np.inf
    for iterations in range(1, cfg.max_sinkhorn_iters + 1):
        kb = kernel @ b
        if np.any(kb == 0) or not np.all(np.isfinite(kb)):
            raise KernelUnderflowError(
                "scaling update divided by zero (kernel underflow); "
                "use the log-domain solver (log_domain=True)"
            )
        a = mu / kb
        kta = kernel.T @ a
        if np.any(kta == 0) or not np.all(np.isfinite(kta)):
            raise KernelUnderflowError(
                "scaling update divided by zero (kernel underflow); "
                "use the log-domain solver (log_domain=True)"
            )
        b = nu / kta
        plan = a[:, None] * kernel * b[None, :]
        err = _marginal_violation(plan, mu, nu)
        history.append(err)
        if err < cfg.marginal_tol:
            converged = True
            break
    plan = a[:, None] * kernel * b[None, :]
    state = SinkhornState(
        iterations=iterations,
        marginal_error=err,
        converged=converged,
        log_domain=False,
        a=a,
        b=b,
        kernel=kernel,
        error_history=tuple(history),
    )
    return plan, state


def _solve_log(cost, mu, nu, cfg, warm_start=None):
    eps = cfg.epsilon
    with np.errstate(divide="ignore"):
        log_mu = np.log(mu)  # -inf on zero-mass points kills their row exactly
        log_nu = np.log(nu)
    f, g = _warm_potentials(warm_start, eps, mu.size, nu.size)
    history = []
    converged = False
    iterations = 0
    err = np.inf
    scaled = cost / eps
    for iterations in range(1, cfg.max_sinkhorn_iters + 1):
        f = eps * log_mu - eps * _logsumexp(g[None, :] / eps - scaled, axis=1)
        g = eps * log_nu - eps * _logsumexp(f[:, None] / eps - scaled, axis=0)
        plan = np.exp((f[:, None] + g[None, :]) / eps - scaled)
        err = _marginal_violation(plan, mu, nu)
        history.append(err)
        if err < cfg.marginal_tol:
            converged = True
            break
    plan = np.exp((f[:, None] + g[None, :]) / eps - scaled)
    state = SinkhornState(
        iterations=iterations,
        marginal_error=err,
        converged=converged,
        log_domain=True,
        f=f,
        g=g,
        error_history=tuple(history),
    )
    return plan, state


def sinkhorn_solve(
    cost: np.ndarray,
    mu: DiscreteDistribution,
    nu: DiscreteDistribution,
    cfg: SolverConfig | None = None,
    *,
    with_state: bool = False,
    warm_start: SinkhornState | None = None,
):
    """Solve entropic OT between mu and nu for the given cost matrix.

    Returns the coupling whose marginals match mu and nu within
    cfg.marginal_tol, or the best iterate after cfg.max_sinkhorn_iters with
    the achieved violation recorded in the state. When cfg is None a default
    configuration with epsilon = default_epsilon(cost) is used. With
    ``with_state=True`` returns ``(coupling, SinkhornState)``.

    ``warm_start`` seeds the scalings or potentials from a previous solve
    (unusable states are silently replaced by the cold start); the entropic
    optimum is unique, so warm starting changes only the iteration count.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise InputError(f"cost must be a 2-D matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InputError("cost matrix contains non-finite values")
    if c.shape != (mu.n, nu.n):
        raise DimensionMismatchError(
            f"cost shape {c.shape} does not match marginal sizes ({mu.n}, {nu.n})"
        )
    if cfg is None:
        cfg = SolverConfig(epsilon=default_epsilon(c))
    if use_log_domain(c, cfg):
        plan, state = _solve_log(c, mu.weights, nu.weights, cfg, warm_start)
    else:
        plan, state = _solve_standard(c, mu.weights, nu.weights, cfg, warm_start)
    tol = max(cfg.marginal_tol, state.marginal_error * (1 + 1e-12) + 1e-300)
    coupling = Coupling(plan, mu, nu, marginal_tol=tol)
    if with_state:
        return coupling, state
    return coupling
