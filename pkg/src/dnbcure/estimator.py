"""scikit-learn style front end for the cure model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from dnbcure._validation import check_design, check_survival_target, resolve_columns
from dnbcure.exceptions import UsageError
from dnbcure.likelihood import log_likelihood_terms, project
from dnbcure.model import Dataset, ParamVector, cure_rate, logistic_link, loglinear_link, pop_survival
from dnbcure.optimizer import OptimizerConfig, fit

__all__ = ["DestructiveNBCure", "auto_initial_guess"]

_EULER_GAMMA = 0.5772156649015329


def auto_initial_guess(data: Dataset) -> np.ndarray:
    """Data-driven starting point.

    The Weibull pair comes from the log-time moments of the observed events
    (``log Y = -log gamma2 + gamma1 * log E`` with ``E`` standard exponential);
    the regression coefficients start at zero except the activation
    intercept, and ``phi`` at 1.
    """
    times = data.time[data.event == 1]
    if times.size < 2:
        times = data.time
    log_t = np.log(times)
    sd = float(log_t.std()) if times.size > 1 else 0.0
    gamma1 = sd * np.sqrt(6.0) / np.pi if sd > 0 else 1.0
    gamma2 = float(np.exp(-log_t.mean() - gamma1 * _EULER_GAMMA))
    theta = np.zeros(3 + data.q1 + data.q2)
    theta[0] = 1.0
    theta[-2:] = gamma1, gamma2
    return project(theta)


class DestructiveNBCure(BaseEstimator):
    """Destructive negative binomial cure rate model fitted by projected CG ascent.

    Parameters
    ----------
    p_features : list of int or str
        Columns of ``X`` entering the logistic link for the activation
        probability. An intercept is always added.
    eta_features : list of int or str
        Columns entering the log link for the mean number of risks (no
        intercept). Required.
    variant : {"hz", "fr", "dy", "sd"}
        Conjugate gradient update.
    max_iter, tol, armijo, step_init, backtrack, max_backtracks
        Optimizer controls; see :class:`~dnbcure.optimizer.OptimizerConfig`.
    init : "auto" or array-like
        Starting parameter vector ``[phi, beta1, beta2, gamma1, gamma2]``.

    Attributes
    ----------
    theta_ : ParamVector
    coef_ : ndarray, the flat parameter vector
    loglik_ : float
    n_iter_ : int
    converged_ : bool
    """

    def __init__(
        self,
        p_features=None,
        eta_features=None,
        variant="hz",
        max_iter=500,
        tol=1e-3,
        armijo=0.1,
        step_init=1.0,
        backtrack=0.5,
        max_backtracks=50,
        init="auto",
    ):
        self.p_features = p_features
        self.eta_features = eta_features
        self.variant = variant
        self.max_iter = max_iter
        self.tol = tol
        self.armijo = armijo
        self.step_init = step_init
        self.backtrack = backtrack
        self.max_backtracks = max_backtracks
        self.init = init

    def _config(self) -> OptimizerConfig:
        return OptimizerConfig(
            k_max=self.max_iter,
            tol=self.tol,
            lam=self.armijo,
            s_init=self.step_init,
            backtrack=self.backtrack,
            max_backtracks=self.max_backtracks,
            variant=self.variant,
        )

    def _design(self, X, time=None, event=None, fitting=False) -> Dataset:
        arr, names = check_design(X)
        if fitting:
            self.n_features_in_ = arr.shape[1]
            if names is not None:
                self.feature_names_in_ = np.asarray(names, dtype=object)
            if self.eta_features is None or len(np.atleast_1d(self.eta_features)) == 0:
                raise UsageError("eta_features must name at least one column")
            self._eta_idx = resolve_columns(self.eta_features, arr.shape[1], names, "eta_features")
            if self.p_features is None:
                self._p_idx = [j for j in range(arr.shape[1]) if j not in self._eta_idx]
            else:
                self._p_idx = resolve_columns(self.p_features, arr.shape[1], names, "p_features")
        elif arr.shape[1] != self.n_features_in_:
            raise UsageError(f"X has {arr.shape[1]} columns, model was fitted with {self.n_features_in_}")
        n = arr.shape[0]
        if time is None:
            time, event = np.ones(n), np.zeros(n)
        labels = names or [f"x{j}" for j in range(arr.shape[1])]
        return Dataset(
            time,
            event,
            np.column_stack([np.ones(n), arr[:, self._p_idx]]),
            arr[:, self._eta_idx],
            tuple(["intercept"] + [labels[j] for j in self._p_idx]),
            tuple(labels[j] for j in self._eta_idx),
        )

    def fit(self, X, y):
        """Fit to covariates ``X`` and a survival target ``y`` of (time, event)."""
        time, event = check_survival_target(y)
        data = self._design(X, time, event, fitting=True)
        if isinstance(self.init, str):
            if self.init != "auto":
                raise UsageError("init must be 'auto' or a parameter vector")
            theta0 = auto_initial_guess(data)
        else:
            theta0 = project(np.asarray(self.init, dtype=float))
        result = fit(data, theta0, self._config())
        self.result_ = result
        self.theta_ = result.theta_hat
        self.coef_ = result.theta
        self.loglik_ = result.loglik
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        self.param_names_ = data.param_names()
        return self

    def _links(self, X):
        check_is_fitted(self, "theta_")
        data = self._design(X)
        p = logistic_link(data.x_p, self.theta_.beta1)
        eta = loglinear_link(data.x_eta, self.theta_.beta2)
        return eta, p

    def predict(self, X) -> np.ndarray:
        """Cure rate of each row."""
        return self.predict_cure_rate(X)

    def predict_cure_rate(self, X) -> np.ndarray:
        eta, p = self._links(X)
        return cure_rate(eta, p, self.theta_.phi)

    def predict_survival(self, X, times) -> np.ndarray:
        """Population survival, shape ``(n_rows, n_times)``."""
        eta, p = self._links(X)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        t = self.theta_
        return pop_survival(times[None, :], eta[:, None], p[:, None], t.phi, t.gamma1, t.gamma2)

    def score(self, X, y) -> float:
        """Mean log-likelihood per subject."""
        check_is_fitted(self, "theta_")
        time, event = check_survival_target(y)
        data = self._design(X, time, event)
        return float(np.mean(log_likelihood_terms(self.coef_, data)))

    def to_dataset(self, X, y) -> Dataset:
        """Dataset built with the fitted column mapping (for bootstrap and diagnostics)."""
        check_is_fitted(self, "theta_")
        time, event = check_survival_target(y)
        return self._design(X, time, event)
