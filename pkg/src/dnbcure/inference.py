"""Nonparametric bootstrap standard errors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from numpy.typing import NDArray

from dnbcure.exceptions import InferenceError, UsageError
from dnbcure.likelihood import as_theta, is_feasible
from dnbcure.model import Dataset, ParamVector
from dnbcure.optimizer import OptimizerConfig, fit

__all__ = ["BootstrapResult", "bootstrap_se"]

#: Share of failed resamples above which a warning is attached to the result.
FAILURE_WARN_FRACTION = 0.10


@dataclass
class BootstrapResult:
    se: NDArray[np.float64]
    B: int
    failed_count: int
    estimates: NDArray[np.float64] | None = None
    converged: NDArray[np.bool_] | None = None
    warning: str | None = None
    param_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "B": self.B,
            "failed_count": self.failed_count,
            "se": dict(zip(self.param_names, self.se.tolist())) if self.param_names else self.se.tolist(),
            "warning": self.warning,
        }
        return out


def _refit(data: Dataset, idx: NDArray, theta_hat: NDArray, cfg: OptimizerConfig):
    res = fit(data.take(idx), theta_hat, cfg)
    return res.theta, res.converged


def bootstrap_se(
    data: Dataset,
    theta_hat: ParamVector | NDArray,
    B: int = 500,
    cfg: OptimizerConfig | None = None,
    rng: np.random.Generator | int | None = None,
    n_jobs: int = 1,
    keep_estimates: bool = True,
) -> BootstrapResult:
    """Standard errors from ``B`` case resamples, each refitted from ``theta_hat``.

    The standard error is the sample standard deviation (``ddof=1``) over the
    resamples whose fit converged; the others are counted in
    ``failed_count``.
    """
    if int(B) < 2:
        raise UsageError("bootstrap needs B >= 2 resamples")
    theta_hat = as_theta(theta_hat)
    if not is_feasible(theta_hat):
        raise UsageError("theta_hat must be feasible")
    cfg = (cfg or OptimizerConfig()).replace(keep_trace=False)
    rng = np.random.default_rng(rng)
    # all indices drawn up front so results do not depend on n_jobs
    indices = rng.integers(0, data.n, size=(int(B), data.n))
    if n_jobs == 1:
        out = [_refit(data, idx, theta_hat, cfg) for idx in indices]
    else:
        out = Parallel(n_jobs=n_jobs)(delayed(_refit)(data, idx, theta_hat, cfg) for idx in indices)
    estimates = np.array([o[0] for o in out])
    converged = np.array([o[1] for o in out], dtype=bool)
    n_ok = int(converged.sum())
    if n_ok == 0:
        raise InferenceError("no bootstrap resample converged")
    if n_ok < 2:
        raise InferenceError("fewer than two bootstrap resamples converged; standard errors undefined")
    se = estimates[converged].std(axis=0, ddof=1)
    failed = int(B) - n_ok
    message = None
    if failed > FAILURE_WARN_FRACTION * B:
        message = f"{failed} of {B} bootstrap fits did not converge"
        warnings.warn(message, RuntimeWarning, stacklevel=2)
    return BootstrapResult(
        se=se,
        B=int(B),
        failed_count=failed,
        estimates=estimates if keep_estimates else None,
        converged=converged if keep_estimates else None,
        warning=message,
        param_names=data.param_names(),
    )
