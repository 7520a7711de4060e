"""Observed-data log-likelihood of the destructive NB cure model and its gradient.

Parameters are handled as a flat vector laid out as

    [phi, beta1 (q1 entries), beta2 (q2 entries), gamma1, gamma2]

which is what the optimizer works on; :class:`~dnbcure.model.ParamVector` is
accepted wherever a vector is.

Per subject, with ``u = eta * p``, ``z = (gamma2 * y) ** (1/gamma1)``,
``F = 1 - exp(-z)`` and ``A = 1 + phi * u * F``::

    l_i = delta * [log u + log z - z - log gamma1 - log y]
          - (delta + 1/phi) * log A
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, log_expit

from dnbcure.exceptions import DomainError, UsageError
from dnbcure.model import FEASIBILITY_FLOOR, Dataset, ParamVector

__all__ = [
    "as_theta",
    "log_likelihood",
    "log_likelihood_terms",
    "grad_log_likelihood",
    "loglik_and_grad",
    "fd_gradient",
    "central_difference",
    "project",
    "is_feasible",
]


def as_theta(theta: ArrayLike | ParamVector) -> NDArray[np.float64]:
    if isinstance(theta, ParamVector):
        return theta.to_array()
    return np.asarray(theta, dtype=float)


def _positive_mask(dim: int) -> NDArray[np.bool_]:
    mask = np.zeros(dim, dtype=bool)
    mask[[0, -2, -1]] = True
    return mask


def project(theta: ArrayLike | ParamVector) -> NDArray[np.float64] | ParamVector:
    """Clamp ``phi``, ``gamma1``, ``gamma2`` to at least ``FEASIBILITY_FLOOR``.

    Regression coefficients pass through untouched. Returns the same kind of
    object it was given.
    """
    arr = as_theta(theta).copy()
    mask = _positive_mask(arr.size)
    arr[mask] = np.maximum(arr[mask], FEASIBILITY_FLOOR)
    if isinstance(theta, ParamVector):
        return ParamVector.from_array(arr, theta.q1, theta.q2)
    return arr


def is_feasible(theta: ArrayLike | ParamVector) -> bool:
    arr = as_theta(theta)
    if arr.ndim != 1 or arr.size < 5:
        return False
    return bool(
        arr[0] >= FEASIBILITY_FLOOR
        and arr[-2] >= FEASIBILITY_FLOOR
        and arr[-1] >= FEASIBILITY_FLOOR
        and np.isfinite(arr).all()
    )


def _unpack(theta: NDArray, data: Dataset):
    q1, q2 = data.q1, data.q2
    if theta.shape != (3 + q1 + q2,):
        raise UsageError(f"parameter vector has length {theta.size}, dataset needs {3 + q1 + q2}")
    if not is_feasible(theta):
        raise DomainError("parameter vector is outside the feasible set (phi, gamma1, gamma2 must be >= 1e-6)")
    return theta[0], theta[1 : 1 + q1], theta[1 + q1 : 1 + q1 + q2], theta[-2], theta[-1]


def _pieces(theta: NDArray, data: Dataset):
    phi, b1, b2, g1, g2 = _unpack(theta, data)
    a = data.x_p @ b1
    log_u = data.x_eta @ b2 + log_expit(a)
    log_z = (np.log(g2) + data.log_time) / g1
    with np.errstate(over="ignore", divide="ignore"):
        z = np.exp(log_z)
        # phi * u * F in log space so that u = inf, F = 0 cannot meet
        phiuF = np.exp(np.log(phi) + log_u + np.log(-np.expm1(-z)))
    log_A = np.log1p(phiuF)
    return phi, g1, g2, a, log_u, log_z, z, phiuF, log_A


def _loglik_value(data: Dataset, phi, g1, log_u, log_z, z, log_A) -> float:
    ev = data.event_index
    event_part = np.sum(log_u[ev] + log_z[ev] - z[ev]) - ev.size * np.log(g1) - np.sum(data.log_time[ev])
    return float(event_part - np.sum(log_A) / phi - np.sum(log_A[ev]))


def log_likelihood_terms(theta: ArrayLike | ParamVector, data: Dataset) -> NDArray[np.float64]:
    """Per-subject contributions ``delta*log f_pop + (1-delta)*log S_pop``."""
    theta = as_theta(theta)
    phi, g1, _, _, log_u, log_z, z, _, log_A = _pieces(theta, data)
    d = data.event
    with np.errstate(invalid="ignore"):
        log_f_part = np.where(d > 0, log_u + log_z - z - np.log(g1) - data.log_time, 0.0)
    return log_f_part - (d + 1.0 / phi) * log_A


def log_likelihood(theta: ArrayLike | ParamVector, data: Dataset) -> float:
    theta = as_theta(theta)
    phi, g1, _, _, log_u, log_z, z, _, log_A = _pieces(theta, data)
    return _loglik_value(data, phi, g1, log_u, log_z, z, log_A)


def loglik_and_grad(theta: ArrayLike | ParamVector, data: Dataset) -> tuple[float, NDArray[np.float64]]:
    """Log-likelihood and its analytic gradient in one pass."""
    theta = as_theta(theta)
    phi, g1, g2, a, log_u, log_z, z, phiuF, log_A = _pieces(theta, data)
    d = data.event
    value = _loglik_value(data, phi, g1, log_u, log_z, z, log_A)
    c = d + 1.0 / phi
    r = phiuF / (1.0 + phiuF)

    # u * dl/du; the link derivatives follow from d(log u)/d(beta1) = (1-p) x_p
    # and d(log u)/d(beta2) = x_eta
    psi = d - c * r
    d_beta1 = data.x_p.T @ (psi * expit(-a))
    d_beta2 = data.x_eta.T @ psi

    # log1p(x)/phi^2 - x/(phi*A) with x = phi u F
    d_phi = np.sum(log_A) / phi**2 - np.sum(c * r) / phi

    # z * dl/dz; phi u z S / A = r * z S / F
    # overflow here only happens where the value itself is -inf (z beyond
    # double range); the line search never accepts such points
    with np.errstate(over="ignore", invalid="ignore"):
        zS_over_F = np.where(z > 1e-300, np.exp(log_z - z) / -np.expm1(-z), 1.0)
        Gz = d * (1.0 - z) - c * r * zS_over_F
        log_g2y = np.log(g2) + data.log_time
        d_g1 = -np.sum(Gz * log_g2y) / g1**2 - d.sum() / g1
        d_g2 = np.sum(Gz) / (g1 * g2)

    grad = np.concatenate([[d_phi], d_beta1, d_beta2, [d_g1, d_g2]])
    return value, grad


def grad_log_likelihood(theta: ArrayLike | ParamVector, data: Dataset) -> NDArray[np.float64]:
    return loglik_and_grad(theta, data)[1]


def central_difference(
    func: Callable[[NDArray[np.float64]], float], x: ArrayLike, h: float | ArrayLike
) -> NDArray[np.float64]:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    if np.any(h <= 0) or not np.all(np.isfinite(h)):
        raise UsageError("finite-difference step must be > 0")
    out = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        out[j] = (func(x + e) - func(x - e)) / (2.0 * h[j])
    return out


def fd_gradient(
    theta: ArrayLike | ParamVector, data: Dataset, h: float | ArrayLike | None = None
) -> NDArray[np.float64]:
    """Finite-difference gradient of :func:`log_likelihood`, used as a test oracle.

    The default step is ``1e-6 * max(1, |theta_j|)``. Raises
    :class:`DomainError` if a perturbed point leaves the feasible set.
    """
    theta = as_theta(theta)
    if h is None:
        h = 1e-6 * np.maximum(1.0, np.abs(theta))
    h = np.broadcast_to(np.asarray(h, dtype=float), theta.shape)
    if np.any(h <= 0):
        raise UsageError("finite-difference step must be > 0")
    mask = _positive_mask(theta.size)
    if np.any(theta[mask] - h[mask] < FEASIBILITY_FLOOR):
        raise DomainError("finite-difference stencil crosses the feasibility boundary")
    return central_difference(lambda t: log_likelihood(t, data), theta, h)
