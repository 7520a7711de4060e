"""Projected nonlinear conjugate gradient ascent with Armijo backtracking.

The driver :func:`maximize` works on any smooth objective given as a value
function and a gradient function over flat numpy vectors; :func:`fit`
specialises it to the cure-model log-likelihood.

Each iteration takes ``theta <- P[theta + s d]`` where ``s`` is the first
step in ``s_init * backtrack**j`` whose projected candidate satisfies the
sufficient-increase condition, then updates ``d <- g_new + xi * d`` with
``xi`` from the selected conjugate gradient formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from dnbcure.exceptions import DataError, NotAscentDirection, NumericalError, UsageError
from dnbcure.likelihood import as_theta, log_likelihood, loglik_and_grad, project
from dnbcure.model import Dataset, ParamVector

__all__ = [
    "VARIANTS",
    "OptimizerConfig",
    "IterRecord",
    "IterState",
    "FitResult",
    "hz_coefficient",
    "fr_coefficient",
    "dy_coefficient",
    "sd_coefficient",
    "relative_change",
    "armijo_search",
    "maximize",
    "fit",
]

Variant = Literal["hz", "fr", "dy", "sd"]
VARIANTS: tuple[str, ...] = ("hz", "fr", "dy", "sd")

_ALIASES = {
    "hz": "hz",
    "hager-zhang": "hz",
    "fr": "fr",
    "fletcher-reeves": "fr",
    "dy": "dy",
    "dai-yuan": "dy",
    "sd": "sd",
    "steepest": "sd",
    "steepestascent": "sd",
    "steepest-ascent": "sd",
}


def normalize_variant(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise UsageError(f"unknown CG variant {name!r}; choose from {', '.join(VARIANTS)}") from None


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters of the projected CG ascent.

    Defaults reproduce the simulation setup: 500 iterations, Armijo constant
    0.1, relative-change tolerance 1e-3.
    """

    k_max: int = 500
    tol: float = 1e-3
    lam: float = 0.1
    s_init: float = 1.0
    backtrack: float = 0.5
    max_backtracks: int = 50
    variant: str = "hz"
    denom_floor: float = 1e-8
    keep_trace: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if not (0.0 < self.lam < 0.5):
            raise UsageError("Armijo constant must satisfy 0 < lam < 1/2")
        if not (0.0 < self.backtrack < 1.0):
            raise UsageError("backtracking factor must lie in (0, 1)")
        if int(self.k_max) < 1:
            raise UsageError("k_max must be >= 1")
        if not self.tol > 0:
            raise UsageError("tol must be > 0")
        if not self.s_init > 0:
            raise UsageError("s_init must be > 0")
        if int(self.max_backtracks) < 0:
            raise UsageError("max_backtracks must be >= 0")
        if not self.denom_floor > 0:
            raise UsageError("denom_floor must be > 0")

    def replace(self, **changes) -> "OptimizerConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "k_max": self.k_max,
            "tol": self.tol,
            "lam": self.lam,
            "s_init": self.s_init,
            "backtrack": self.backtrack,
            "max_backtracks": self.max_backtracks,
            "variant": self.variant,
            "denom_floor": self.denom_floor,
        }


@dataclass(frozen=True)
class IterRecord:
    """One row of the optimization trace."""

    k: int
    loglik_prev: float
    loglik: float
    step: float
    xi: float
    dg: float
    rel_change: float
    projected: bool
    restarted: bool


@dataclass
class IterState:
    theta: NDArray[np.float64]
    g: NDArray[np.float64]
    d: NDArray[np.float64]
    k: int = 0


@dataclass
class FitResult:
    theta_hat: ParamVector | NDArray[np.float64]
    loglik: float
    iterations: int
    converged: bool
    status: str
    n_evals: int = 0
    trace: list[IterRecord] = field(default_factory=list)

    @property
    def theta(self) -> NDArray[np.float64]:
        return as_theta(self.theta_hat)

    def to_dict(self) -> dict:
        theta = self.theta_hat.to_dict() if isinstance(self.theta_hat, ParamVector) else self.theta.tolist()
        return {
            "theta_hat": theta,
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "status": self.status,
            "n_evals": self.n_evals,
        }


# ---------------------------------------------------------------------------
# Update coefficients
# ---------------------------------------------------------------------------


def hz_coefficient(d: ArrayLike, g_next: ArrayLike, g_prev: ArrayLike) -> float:
    """Hager-Zhang mixing coefficient for ascent directions ``d <- g_next + xi d``.

    With ``w = g_next - g_prev`` this is ``(2 d |w|^2/(d.w) - w) . g_next / (d.w)``,
    i.e. the Hager-Zhang descent coefficient applied to ``-l`` (whose gradient
    difference is ``-w``). Returns 0 (restart) when ``d.w`` is numerically zero.
    """
    d = np.asarray(d, dtype=float)
    g_next = np.asarray(g_next, dtype=float)
    w = g_next - np.asarray(g_prev, dtype=float)
    dw = float(d @ w)
    if abs(dw) < 1e-12 * (1.0 + np.linalg.norm(d) * np.linalg.norm(w)):
        return 0.0
    return float((2.0 * d * (w @ w) / dw - w) @ g_next / dw)


def fr_coefficient(g_next: ArrayLike, g_prev: ArrayLike) -> float:
    """Fletcher-Reeves: ``|g_next|^2 / |g_prev|^2``."""
    g_next = np.asarray(g_next, dtype=float)
    g_prev = np.asarray(g_prev, dtype=float)
    denom = float(g_prev @ g_prev)
    if denom < 1e-24:
        return 0.0
    return float(g_next @ g_next) / denom


def dy_coefficient(d: ArrayLike, g_next: ArrayLike, g_prev: ArrayLike) -> float:
    """Dai-Yuan for ascent: ``|g_next|^2 / (d . (g_prev - g_next))``."""
    d = np.asarray(d, dtype=float)
    g_next = np.asarray(g_next, dtype=float)
    w = np.asarray(g_prev, dtype=float) - g_next
    dw = float(d @ w)
    if abs(dw) < 1e-12 * (1.0 + np.linalg.norm(d) * np.linalg.norm(w)):
        return 0.0
    return float(g_next @ g_next) / dw


def sd_coefficient(d, g_next, g_prev) -> float:
    return 0.0


def _coefficient(variant: str, d, g_next, g_prev) -> float:
    if variant == "hz":
        return hz_coefficient(d, g_next, g_prev)
    if variant == "fr":
        return fr_coefficient(g_next, g_prev)
    if variant == "dy":
        return dy_coefficient(d, g_next, g_prev)
    return 0.0


def relative_change(theta_new: ArrayLike, theta_old: ArrayLike, denom_floor: float = 1e-8) -> float:
    """Norm of the componentwise relative step, denominators floored at ``denom_floor``."""
    theta_new = np.asarray(theta_new, dtype=float)
    theta_old = np.asarray(theta_old, dtype=float)
    if theta_new.shape != theta_old.shape:
        raise UsageError("vectors must have the same shape")
    return float(np.linalg.norm((theta_new - theta_old) / np.maximum(np.abs(theta_old), denom_floor)))


# ---------------------------------------------------------------------------
# Line search
# ---------------------------------------------------------------------------


def _identity(x):
    return x


def _line_search(objective, theta, f0, d, dg, cfg: OptimizerConfig, proj):
    """Backtracking Armijo search; returns ``(s, candidate, value, evals)``.

    ``s == 0`` means every trial step was rejected.
    """
    s = cfg.s_init
    evals = 0
    for _ in range(cfg.max_backtracks + 1):
        cand = proj(theta + s * d)
        val = objective(cand)
        evals += 1
        if np.isfinite(val) and val >= f0 + cfg.lam * s * dg:
            return s, cand, float(val), evals
        s *= cfg.backtrack
    return 0.0, theta, f0, evals


def armijo_search(
    objective: Callable[[NDArray[np.float64]], float],
    theta: ArrayLike,
    d: ArrayLike,
    g: ArrayLike,
    cfg: OptimizerConfig | None = None,
    project: Callable | None = None,
    f0: float | None = None,
) -> float:
    """First step ``s_init * backtrack**j`` meeting the sufficient-increase test.

    The test ``l(P[theta + s d]) >= l(theta) + lam * s * d.g`` is applied at
    the projected candidate. Returns 0.0 if no trial step is accepted.

    Raises
    ------
    NotAscentDirection
        If ``d . g <= 0``; the caller must reset the direction.
    """
    cfg = cfg or OptimizerConfig()
    theta = np.asarray(theta, dtype=float)
    d = np.asarray(d, dtype=float)
    dg = float(d @ np.asarray(g, dtype=float))
    if not dg > 0:
        raise NotAscentDirection(f"search direction is not an ascent direction (d.g = {dg:.3g})")
    if f0 is None:
        f0 = objective(theta)
    s, *_ = _line_search(objective, theta, f0, d, dg, cfg, project or _identity)
    return s


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def maximize(
    fun: Callable[[NDArray[np.float64]], float],
    grad: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    theta0: ArrayLike,
    cfg: OptimizerConfig | None = None,
    project: Callable | None = None,
) -> FitResult:
    """Projected nonlinear CG ascent on ``fun``.

    Starts from ``d0 = g0``. Whenever the new direction fails ``d.g > 0`` it is
    replaced by the gradient; if the line search rejects every trial step
    along a CG direction, it is retried once along the gradient. Stops when
    the relative change of ``theta`` drops below ``tol`` or after ``k_max``
    iterations, and returns the best iterate seen.
    """
    cfg = cfg or OptimizerConfig()
    proj = project or _identity
    theta = proj(np.array(theta0, dtype=float))
    f = float(fun(theta))
    g = np.asarray(grad(theta), dtype=float)
    n_evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError("objective or gradient is not finite at the starting point", iteration=0)
    d = g.copy()
    best_f, best_theta = f, theta.copy()
    trace: list[IterRecord] = []
    status = "max_iter"
    k = 0

    for k in range(cfg.k_max):
        restarted = False
        if not np.any(g):
            s, theta_new, f_new, dg = 0.0, theta, f, 0.0
        else:
            dg = float(d @ g)
            if not dg > 0:
                d, dg, restarted = g.copy(), float(g @ g), True
            s, theta_new, f_new, ev = _line_search(fun, theta, f, d, dg, cfg, proj)
            n_evals += ev
            if s == 0.0 and not restarted:
                d, dg, restarted = g.copy(), float(g @ g), True
                s, theta_new, f_new, ev = _line_search(fun, theta, f, d, dg, cfg, proj)
                n_evals += ev

        if s > 0.0:
            g_new = np.asarray(grad(theta_new), dtype=float)
            if not np.all(np.isfinite(g_new)):
                raise NumericalError("gradient is not finite", iteration=k + 1)
            projected = not np.array_equal(theta_new, theta + s * d)
        else:
            g_new, projected = g, False

        xi = _coefficient(cfg.variant, d, g_new, g)
        d_new = g_new + xi * d
        if not float(d_new @ g_new) > 0:
            d_new = g_new.copy()
        rc = relative_change(theta_new, theta, cfg.denom_floor)

        if cfg.keep_trace:
            trace.append(IterRecord(k, f, f_new, s, xi, dg, rc, projected, restarted))

        theta, f, g, d = theta_new, f_new, g_new, d_new
        if f > best_f:
            best_f, best_theta = f, theta.copy()

        if rc < cfg.tol:
            if s == 0.0 and np.any(g):
                status = "stalled"
            else:
                status = "converged"
            break

    return FitResult(
        theta_hat=best_theta,
        loglik=best_f,
        iterations=k + 1,
        converged=status == "converged",
        status=status,
        n_evals=n_evals,
        trace=trace,
    )


def fit(data: Dataset, theta0: ParamVector | ArrayLike, cfg: OptimizerConfig | None = None) -> FitResult:
    """Maximum likelihood fit of the cure model by projected CG ascent."""
    if not isinstance(data, Dataset):
        raise DataError("data must be a Dataset")
    theta0 = as_theta(theta0)
    if theta0.shape != (3 + data.q1 + data.q2,):
        raise UsageError(f"initial vector has length {theta0.size}, dataset needs {3 + data.q1 + data.q2}")

    def fun(t):
        return log_likelihood(t, data)

    def grad(t):
        return loglik_and_grad(t, data)[1]

    result = maximize(fun, grad, theta0, cfg, project=project)
    result.theta_hat = ParamVector.from_array(result.theta_hat, data.q1, data.q2)
    return result
