"""Distributional building blocks of the destructive negative binomial cure model.

Risk factors ``M`` follow a negative binomial law with mean ``eta`` and
dispersion ``phi``; each one survives treatment independently with
probability ``p``, leaving ``D`` active risks (again negative binomial, mean
``eta * p``). Progression times are Weibull, parameterised as

    F(y) = 1 - exp(-(gamma2 * y) ** (1 / gamma1)).

All functions are pure and broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, gammaln, xlogy

from dnbcure.exceptions import DataError, DomainError, UsageError

__all__ = [
    "FEASIBILITY_FLOOR",
    "ParamVector",
    "Subject",
    "Dataset",
    "logistic_link",
    "loglinear_link",
    "weibull_cdf",
    "weibull_pdf",
    "nb_pmf",
    "active_risk_pmf",
    "nb_pmf_truncated",
    "pop_survival",
    "pop_density",
    "cure_rate",
]

#: Lower bound used for ``phi``, ``gamma1`` and ``gamma2`` by the projection.
FEASIBILITY_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamVector:
    """Full parameter vector ``(phi, beta1, beta2, gamma1, gamma2)``.

    ``beta1`` drives the activation probability through a logistic link and
    carries the intercept as its first entry; ``beta2`` drives the mean
    number of risks through a log link and has no intercept.
    """

    phi: float
    beta1: NDArray[np.float64]
    beta2: NDArray[np.float64]
    gamma1: float
    gamma2: float

    def __post_init__(self):
        b1 = np.atleast_1d(np.asarray(self.beta1, dtype=float))
        b2 = np.atleast_1d(np.asarray(self.beta2, dtype=float))
        if b1.ndim != 1 or b2.ndim != 1 or b1.size < 1 or b2.size < 1:
            raise UsageError("beta1 and beta2 must be non-empty 1-d vectors")
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "gamma1", float(self.gamma1))
        object.__setattr__(self, "gamma2", float(self.gamma2))

    @property
    def q1(self) -> int:
        return self.beta1.size

    @property
    def q2(self) -> int:
        return self.beta2.size

    @property
    def dim(self) -> int:
        return 3 + self.q1 + self.q2

    def to_array(self) -> NDArray[np.float64]:
        return np.concatenate([[self.phi], self.beta1, self.beta2, [self.gamma1, self.gamma2]])

    @classmethod
    def from_array(cls, theta: ArrayLike, q1: int, q2: int) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (3 + q1 + q2,):
            raise UsageError(f"expected a vector of length {3 + q1 + q2}, got shape {theta.shape}")
        return cls(
            phi=theta[0],
            beta1=theta[1 : 1 + q1].copy(),
            beta2=theta[1 + q1 : 1 + q1 + q2].copy(),
            gamma1=theta[-2],
            gamma2=theta[-1],
        )

    def is_feasible(self) -> bool:
        return bool(
            self.phi >= FEASIBILITY_FLOOR
            and self.gamma1 >= FEASIBILITY_FLOOR
            and self.gamma2 >= FEASIBILITY_FLOOR
            and np.all(np.isfinite(self.to_array()))
        )

    def names(self) -> list[str]:
        return (
            ["phi"]
            + [f"beta1[{j}]" for j in range(self.q1)]
            + [f"beta2[{j}]" for j in range(self.q2)]
            + ["gamma1", "gamma2"]
        )

    def to_dict(self) -> dict:
        return {
            "phi": self.phi,
            "beta1": self.beta1.tolist(),
            "beta2": self.beta2.tolist(),
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamVector":
        return cls(d["phi"], d["beta1"], d["beta2"], d["gamma1"], d["gamma2"])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.q1 == other.q1 and self.q2 == other.q2 and np.array_equal(self.to_array(), other.to_array())

    __hash__ = None  # type: ignore[assignment]


class Subject(NamedTuple):
    """One observed record: time, event indicator and the two design rows."""

    y: float
    delta: int
    x_p: NDArray[np.float64]
    x_eta: NDArray[np.float64]


@dataclass(frozen=True)
class Dataset:
    """Column-oriented container of ``n`` subjects.

    Parameters
    ----------
    time : (n,) array of observed times, all > 0.
    event : (n,) array of 0/1 event indicators (1 = event observed).
    x_p : (n, q1) design for the activation probability; first column is 1.
    x_eta : (n, q2) design for the mean number of risks, no intercept.
    """

    time: NDArray[np.float64]
    event: NDArray[np.float64]
    x_p: NDArray[np.float64]
    x_eta: NDArray[np.float64]
    names_p: tuple[str, ...] = field(default=())
    names_eta: tuple[str, ...] = field(default=())

    def __post_init__(self):
        time = np.atleast_1d(np.array(self.time, dtype=float))
        event = np.atleast_1d(np.array(self.event, dtype=float))
        x_p = np.array(self.x_p, dtype=float)
        x_eta = np.array(self.x_eta, dtype=float)
        if x_p.ndim == 1:
            x_p = x_p[:, None]
        if x_eta.ndim == 1:
            x_eta = x_eta[:, None]
        n = time.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one subject")
        if time.ndim != 1 or event.shape != (n,) or x_p.shape[0] != n or x_eta.shape[0] != n:
            raise DataError("time, event, x_p and x_eta must have the same number of rows")
        bad = np.flatnonzero(~np.isfinite(time) | (time <= 0))
        if bad.size:
            raise DataError("observed times must be finite and > 0", rows=(bad + 1).tolist())
        bad = np.flatnonzero((event != 0) & (event != 1))
        if bad.size:
            raise DataError("event indicator must be 0 or 1", rows=(bad + 1).tolist())
        bad = np.flatnonzero(~np.all(np.isfinite(x_p), axis=1) | ~np.all(np.isfinite(x_eta), axis=1))
        if bad.size:
            raise DataError("covariates must be finite", rows=(bad + 1).tolist())
        bad = np.flatnonzero(x_p[:, 0] != 1.0)
        if bad.size:
            raise DataError("first column of x_p must be the constant 1 (intercept)", rows=(bad + 1).tolist())
        names_p = tuple(self.names_p) or tuple(["intercept"] + [f"x_p{j}" for j in range(1, x_p.shape[1])])
        names_eta = tuple(self.names_eta) or tuple(f"x_eta{j}" for j in range(x_eta.shape[1]))
        for name, value in [("time", time), ("event", event), ("x_p", x_p), ("x_eta", x_eta)]:
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "names_p", names_p)
        object.__setattr__(self, "names_eta", names_eta)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @cached_property
    def log_time(self) -> NDArray[np.float64]:
        return np.log(self.time)

    @cached_property
    def event_index(self) -> NDArray[np.intp]:
        return np.flatnonzero(self.event)

    @property
    def q1(self) -> int:
        return self.x_p.shape[1]

    @property
    def q2(self) -> int:
        return self.x_eta.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Subject]:
        for i in range(self.n):
            yield self[i]

    def __getitem__(self, i: int) -> Subject:
        return Subject(float(self.time[i]), int(self.event[i]), self.x_p[i].copy(), self.x_eta[i].copy())

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject]) -> "Dataset":
        if len(subjects) == 0:
            raise DataError("dataset must contain at least one subject")
        return cls(
            time=[s.y for s in subjects],
            event=[s.delta for s in subjects],
            x_p=np.vstack([np.atleast_1d(s.x_p) for s in subjects]),
            x_eta=np.vstack([np.atleast_1d(s.x_eta) for s in subjects]),
        )

    def take(self, idx: ArrayLike) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.time[idx], self.event[idx], self.x_p[idx], self.x_eta[idx], self.names_p, self.names_eta)

    def concat(self, other: "Dataset") -> "Dataset":
        if (self.q1, self.q2) != (other.q1, other.q2):
            raise UsageError("datasets have different covariate dimensions")
        return Dataset(
            np.concatenate([self.time, other.time]),
            np.concatenate([self.event, other.event]),
            np.vstack([self.x_p, other.x_p]),
            np.vstack([self.x_eta, other.x_eta]),
            self.names_p,
            self.names_eta,
        )

    def param_names(self) -> list[str]:
        return ["phi"] + [f"beta1:{c}" for c in self.names_p] + [f"beta2:{c}" for c in self.names_eta] + ["gamma1", "gamma2"]


# ---------------------------------------------------------------------------
# Links
# ---------------------------------------------------------------------------


def _linear_predictor(x: ArrayLike, beta: ArrayLike) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=float)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if x.shape[-1:] != beta.shape:
        raise UsageError(f"covariate length {x.shape[-1:]} does not match coefficients {beta.shape}")
    return x @ beta


def logistic_link(x_p: ArrayLike, beta1: ArrayLike) -> NDArray[np.float64] | float:
    """Activation probability ``exp(x'b) / (1 + exp(x'b))``.

    ``x_p`` may be a single row or an ``(n, q1)`` matrix.
    """
    return expit(_linear_predictor(x_p, beta1))


def loglinear_link(x_eta: ArrayLike, beta2: ArrayLike) -> NDArray[np.float64] | float:
    """Mean number of initial risks ``exp(x'b)``."""
    return np.exp(_linear_predictor(x_eta, beta2))


# ---------------------------------------------------------------------------
# Weibull progression times
# ---------------------------------------------------------------------------


def _check_weibull(gamma1, gamma2):
    if np.any(np.asarray(gamma1) <= 0) or np.any(np.asarray(gamma2) <= 0):
        raise DomainError("Weibull parameters gamma1 and gamma2 must be > 0")


def _weibull_log_z(y, gamma1, gamma2):
    # log of (gamma2 * y) ** (1 / gamma1)
    with np.errstate(divide="ignore"):
        return np.log(gamma2 * np.asarray(y, dtype=float)) / gamma1


def weibull_cdf(y: ArrayLike, gamma1: float, gamma2: float) -> NDArray[np.float64] | float:
    _check_weibull(gamma1, gamma2)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise DomainError("Weibull cdf is defined for y >= 0")
    with np.errstate(over="ignore"):
        z = np.exp(_weibull_log_z(y, gamma1, gamma2))
    return -np.expm1(-z)


def weibull_pdf(y: ArrayLike, gamma1: float, gamma2: float) -> NDArray[np.float64] | float:
    _check_weibull(gamma1, gamma2)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("Weibull density is evaluated for y > 0 only")
    log_z = _weibull_log_z(y, gamma1, gamma2)
    with np.errstate(over="ignore"):
        z = np.exp(log_z)
    return np.exp(log_z - z - np.log(gamma1 * y))


# ---------------------------------------------------------------------------
# Negative binomial counts
# ---------------------------------------------------------------------------


def _nb_logpmf(m, mean, phi):
    m = np.asarray(m)
    if np.any(m < 0) or np.any(m != np.floor(m)):
        raise DomainError("count must be a nonnegative integer")
    r = 1.0 / phi
    phm = phi * mean
    return (
        gammaln(m + r)
        - gammaln(r)
        - gammaln(m + 1.0)
        + xlogy(m, phm)
        - (m + r) * np.log1p(phm)
    )


def nb_pmf(m: ArrayLike, eta: float, phi: float) -> NDArray[np.float64] | float:
    """P[M = m] for the negative binomial with mean ``eta`` and dispersion ``phi``."""
    if np.any(np.asarray(eta) <= 0) or np.any(np.asarray(phi) <= 0):
        raise DomainError("eta and phi must be > 0")
    return np.exp(_nb_logpmf(m, eta, phi))


def active_risk_pmf(d: ArrayLike, eta: float, phi: float, p: float) -> NDArray[np.float64] | float:
    """P[D = d]: the negative binomial law of the risks left after thinning."""
    if np.any(np.asarray(eta) <= 0) or np.any(np.asarray(phi) <= 0):
        raise DomainError("eta and phi must be > 0")
    if np.any(np.asarray(p) < 0) or np.any(np.asarray(p) > 1):
        raise DomainError("activation probability must lie in [0, 1]")
    return np.exp(_nb_logpmf(d, np.asarray(eta) * np.asarray(p), phi))


def nb_pmf_truncated(
    mean: float, phi: float, tail: float = 1e-12, max_count: int = 100_000, chunk: int = 1024
) -> NDArray[np.float64]:
    """Mass function on ``0..K`` where ``K`` is the first count with cumulative mass >= 1 - tail.

    Stops at ``max_count`` if the tail is heavier than that.
    """
    if mean < 0 or phi <= 0:
        raise DomainError("mean must be >= 0 and phi > 0")
    pieces = []
    total = 0.0
    start = 0
    while start <= max_count:
        m = np.arange(start, min(start + chunk, max_count + 1))
        pm = np.exp(_nb_logpmf(m, mean, phi))
        cum = total + np.cumsum(pm)
        hit = np.flatnonzero(cum >= 1.0 - tail)
        if hit.size:
            pieces.append(pm[: hit[0] + 1])
            break
        pieces.append(pm)
        total = cum[-1]
        start += chunk
    return np.concatenate(pieces)


# ---------------------------------------------------------------------------
# Population survival
# ---------------------------------------------------------------------------


def _check_cure_params(eta, p, phi):
    if np.any(np.asarray(phi) <= 0) or np.any(np.asarray(eta) <= 0):
        raise DomainError("phi and eta must be > 0")
    if np.any(np.asarray(p) < 0) or np.any(np.asarray(p) > 1):
        raise DomainError("activation probability must lie in [0, 1]")


def cure_rate(eta: ArrayLike, p: ArrayLike, phi: float) -> NDArray[np.float64] | float:
    """Long-run probability of no event, ``(1 + phi*eta*p) ** (-1/phi)``."""
    _check_cure_params(eta, p, phi)
    return np.exp(-np.log1p(phi * np.asarray(eta) * np.asarray(p)) / phi)


def pop_survival(y, eta, p, phi, gamma1, gamma2):
    """Improper survival function of the observed lifetime."""
    _check_cure_params(eta, p, phi)
    F = weibull_cdf(y, gamma1, gamma2)
    return np.exp(-np.log1p(phi * np.asarray(eta) * np.asarray(p) * F) / phi)


def pop_density(y, eta, p, phi, gamma1, gamma2):
    """Density ``-dS_pop/dy`` of the observed lifetime (integrates to 1 - p0)."""
    _check_cure_params(eta, p, phi)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("population density is evaluated for y > 0 only")
    u = np.asarray(eta) * np.asarray(p)
    F = weibull_cdf(y, gamma1, gamma2)
    f = weibull_pdf(y, gamma1, gamma2)
    # log S_pop - log(1 + phi u F) = -(1 + 1/phi) log1p(phi u F)
    return u * f * np.exp(-(1.0 + 1.0 / phi) * np.log1p(phi * u * F))
