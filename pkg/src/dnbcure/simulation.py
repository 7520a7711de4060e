"""Synthetic data from the destructive NB cure model and Monte Carlo studies.

Covariates mimic the melanoma cohort: ulceration is Bernoulli, tumour
thickness is Weibull for ulcerated patients (moment matched) and exponential
otherwise. The mean number of risks depends on ulceration through a log link
with no intercept; the activation probability depends on thickness through a
logistic link whose two coefficients are solved per replicate so that ``p``
runs from ``p_low`` at the thinnest tumour to ``p_high`` at the thickest.
"""

from __future__ import annotations

import hashlib
import json
import math
import time as _time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from numpy.typing import NDArray
from scipy.optimize import bisect
from scipy.special import gamma as gamma_fn
from scipy.special import logit

from dnbcure.exceptions import ConfigurationError, DomainError, UsageError
from dnbcure.likelihood import project
from dnbcure.model import Dataset, ParamVector, logistic_link
from dnbcure.optimizer import OptimizerConfig, fit, normalize_variant

__all__ = [
    "SimSetting",
    "LatentDraw",
    "MCReport",
    "PARAM_NAMES",
    "weibull_moment_match",
    "gen_covariates",
    "solve_p_regression",
    "simulate_latent",
    "gen_subject",
    "gen_dataset",
    "initial_guess",
    "replicate_rng",
    "dataset_hash",
    "run_mc_study",
]

#: Parameter order of the simulation layout (q1 = 2, q2 = 1).
PARAM_NAMES = ("phi", "beta0", "beta1", "beta2", "gamma1", "gamma2")


@dataclass(frozen=True)
class SimSetting:
    n: int = 300
    phi_true: float = 0.5
    gamma1_true: float = 0.215
    gamma2_true: float = 0.183
    beta2_true: float = math.log(3.0)
    p_low: float = 0.3
    p_high: float = 0.9
    ulcer_prob: float = 0.44
    thick_ulcer_mean: float = 4.34
    thick_ulcer_var: float = 10.37
    thick_noulcer_mean: float = 1.81
    censor_rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigurationError("n must be >= 1")
        for name in ("phi_true", "gamma1_true", "gamma2_true", "thick_ulcer_mean", "thick_ulcer_var",
                     "thick_noulcer_mean", "censor_rate"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        if not (0.0 < self.p_low < self.p_high < 1.0):
            raise ConfigurationError("need 0 < p_low < p_high < 1")
        if not (0.0 <= self.ulcer_prob <= 1.0):
            raise ConfigurationError("ulcer_prob must lie in [0, 1]")
        if int(self.seed) < 0 or int(self.seed) >= 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimSetting":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown setting keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "SimSetting":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class LatentDraw:
    M: int
    D: int
    progression_times: list[float]
    C: float
    Y: float
    delta: int


# ---------------------------------------------------------------------------
# Covariates
# ---------------------------------------------------------------------------


def weibull_moment_match(mean: float, var: float, lo: float = 0.1, hi: float = 50.0) -> tuple[float, float]:
    """Shape and scale of the Weibull with the given mean and variance.

    The squared coefficient of variation is monotone in the shape, so the
    shape is found by bisection on ``[lo, hi]``.
    """
    if mean <= 0 or var <= 0:
        raise ConfigurationError("mean and variance must be > 0")
    target = var / mean**2

    def resid(k):
        g1 = gamma_fn(1.0 + 1.0 / k)
        return gamma_fn(1.0 + 2.0 / k) / g1**2 - 1.0 - target

    if resid(lo) * resid(hi) > 0:
        raise ConfigurationError(f"no Weibull shape in [{lo}, {hi}] matches mean={mean}, var={var}")
    k = bisect(resid, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    scale = mean / gamma_fn(1.0 + 1.0 / k)
    return float(k), float(scale)


def gen_covariates(setting: SimSetting, rng: np.random.Generator) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    """Ulceration status (0/1) and tumour thickness (mm) for ``setting.n`` patients."""
    n = int(setting.n)
    k, scale = weibull_moment_match(setting.thick_ulcer_mean, setting.thick_ulcer_var)
    ulcer = (rng.uniform(size=n) <= setting.ulcer_prob).astype(np.int64)
    w = scale * rng.weibull(k, size=n)
    e = rng.exponential(setting.thick_noulcer_mean, size=n)
    thickness = np.where(ulcer == 1, w, e)
    return ulcer, thickness


def solve_p_regression(x_min: float, x_max: float, p_low: float, p_high: float) -> tuple[float, float]:
    """Intercept and slope with ``p(x_min) = p_low`` and ``p(x_max) = p_high``."""
    if not x_max > x_min:
        raise ConfigurationError("covariate range is degenerate (x_max must exceed x_min)")
    if not (0.0 < p_low < 1.0 and 0.0 < p_high < 1.0):
        raise ConfigurationError("probabilities must lie strictly inside (0, 1)")
    slope = (logit(p_high) - logit(p_low)) / (x_max - x_min)
    intercept = logit(p_low) - slope * x_min
    return float(intercept), float(slope)


# ---------------------------------------------------------------------------
# Lifetimes
# ---------------------------------------------------------------------------


def _check_truths(truths: ParamVector):
    if not truths.is_feasible():
        raise DomainError("true parameter vector is infeasible")


def _weibull_draws(rng, size, gamma1, gamma2):
    # inverse of F(w) = 1 - exp(-(gamma2 w)^(1/gamma1))
    return rng.standard_exponential(size) ** gamma1 / gamma2


def simulate_latent(
    x_p: NDArray, x_eta: NDArray, truths: ParamVector, censor_rate: float, rng: np.random.Generator,
    censoring: bool = True,
) -> dict[str, NDArray]:
    """Vectorised draw of ``(M, D, min W, C, Y, delta)`` for every row.

    ``min W`` is ``inf`` when ``D == 0``. With ``censoring=False`` the
    censoring time is infinite, so cured subjects get ``Y = inf``.
    """
    _check_truths(truths)
    x_p = np.atleast_2d(x_p)
    x_eta = np.atleast_2d(x_eta)
    n = x_p.shape[0]
    eta = np.exp(x_eta @ truths.beta2)
    p = logistic_link(x_p, truths.beta1)
    phi = truths.phi
    M = rng.negative_binomial(1.0 / phi, 1.0 / (1.0 + phi * eta), size=n)
    D = np.where(M > 0, rng.binomial(M, p), 0)
    if censoring:
        C = rng.exponential(1.0 / censor_rate, size=n)
    else:
        C = np.full(n, np.inf)
    w_min = np.full(n, np.inf)
    total = int(D.sum())
    if total:
        w = _weibull_draws(rng, total, truths.gamma1, truths.gamma2)
        active = np.flatnonzero(D > 0)
        starts = np.concatenate([[0], np.cumsum(D[active])[:-1]])
        w_min[active] = np.minimum.reduceat(w, starts)
    Y = np.minimum(w_min, C)
    delta = (w_min < C).astype(np.int64)
    return {"M": M, "D": D, "W_min": w_min, "C": C, "Y": Y, "delta": delta}


def gen_subject(
    ulcer: float, thickness: float, truths: ParamVector, censor_rate: float, rng: np.random.Generator,
    M: int | None = None,
) -> LatentDraw:
    """Draw one subject's latent risks and observed lifetime.

    ``M`` can be fixed to override the negative binomial draw.
    """
    _check_truths(truths)
    eta = math.exp(float(truths.beta2[0]) * ulcer)
    p = float(logistic_link(np.array([1.0, thickness]), truths.beta1))
    phi = truths.phi
    if M is None:
        M = int(rng.negative_binomial(1.0 / phi, 1.0 / (1.0 + phi * eta)))
    D = int(rng.binomial(M, p)) if M > 0 else 0
    C = float(rng.exponential(1.0 / censor_rate))
    if D == 0:
        return LatentDraw(M, 0, [], C, C, 0)
    w = _weibull_draws(rng, D, truths.gamma1, truths.gamma2)
    Y = min(float(w.min()), C)
    return LatentDraw(M, D, w.tolist(), C, Y, int(Y < C))


def gen_dataset(setting: SimSetting, rng: np.random.Generator) -> tuple[Dataset, ParamVector]:
    """One replicate: covariates, replicate-specific truths, then lifetimes."""
    ulcer, thickness = gen_covariates(setting, rng)
    if setting.n > 1 and thickness.max() > thickness.min():
        b0, b1 = solve_p_regression(thickness.min(), thickness.max(), setting.p_low, setting.p_high)
    else:
        # a single subject gives no range; fall back to a flat p at the midpoint
        b0, b1 = float(logit(0.5 * (setting.p_low + setting.p_high))), 0.0
    truths = ParamVector(setting.phi_true, [b0, b1], [setting.beta2_true], setting.gamma1_true, setting.gamma2_true)
    x_p = np.column_stack([np.ones(setting.n), thickness])
    x_eta = ulcer[:, None].astype(float)
    draw = simulate_latent(x_p, x_eta, truths, setting.censor_rate, rng)
    data = Dataset(draw["Y"], draw["delta"], x_p, x_eta, ("intercept", "thickness"), ("ulcer",))
    return data, truths


def initial_guess(truths: ParamVector | NDArray, rng: np.random.Generator) -> NDArray[np.float64]:
    """Uniform draw within 20% of each true value, projected to feasibility."""
    theta = truths.to_array() if isinstance(truths, ParamVector) else np.asarray(truths, dtype=float)
    half = 0.2 * np.abs(theta)
    return project(rng.uniform(theta - half, theta + half))


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent generator for replicate ``rep``; identical across variants."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(rep),))))


def dataset_hash(data: Dataset) -> str:
    h = hashlib.sha256()
    for arr in (data.time, data.event, data.x_p, data.x_eta):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class MCReport:
    """Per-replicate estimates plus bias/RMSE summaries.

    Arrays are indexed ``[variant, replicate, parameter]``.
    """

    setting: SimSetting
    variants: list[str]
    estimates: NDArray[np.float64]
    truths: NDArray[np.float64]
    converged: NDArray[np.bool_]
    iterations: NDArray[np.int64]
    dataset_hashes: list[str]
    wall_time: float = 0.0
    param_names: tuple[str, ...] = PARAM_NAMES
    config: dict = field(default_factory=dict)

    @property
    def reps(self) -> int:
        return self.truths.shape[0]

    @property
    def errors(self) -> NDArray[np.float64]:
        return self.estimates - self.truths[None, :, :]

    @property
    def bias(self) -> NDArray[np.float64]:
        return self.errors.mean(axis=1)

    @property
    def rmse(self) -> NDArray[np.float64]:
        return np.sqrt((self.errors**2).mean(axis=1))

    def cell(self, variant: str, parameter: str) -> tuple[float, float]:
        v = self.variants.index(normalize_variant(variant))
        j = self.param_names.index(parameter)
        return float(self.bias[v, j]), float(self.rmse[v, j])

    def rows(self) -> list[dict]:
        out = []
        bias, rmse = self.bias, self.rmse
        for j, name in enumerate(self.param_names):
            for v, variant in enumerate(self.variants):
                out.append({
                    "parameter": name,
                    "variant": variant,
                    "bias": float(bias[v, j]),
                    "rmse": float(rmse[v, j]),
                    "converged_frac": float(self.converged[v].mean()),
                    "mean_iters": float(self.iterations[v].mean()),
                })
        return out


def _one_replicate(setting: SimSetting, rep: int, variants: Sequence[str], cfg: OptimizerConfig):
    rng = replicate_rng(setting.seed, rep)
    data, truths = gen_dataset(setting, rng)
    theta0 = initial_guess(truths, rng)
    ests, conv, iters = [], [], []
    for variant in variants:
        res = fit(data, theta0, cfg.replace(variant=variant, keep_trace=False))
        ests.append(res.theta)
        conv.append(res.converged)
        iters.append(res.iterations)
    return truths.to_array(), ests, conv, iters, dataset_hash(data)


def run_mc_study(
    setting: SimSetting,
    reps: int,
    variants: Sequence[str] = ("hz",),
    cfg: OptimizerConfig | None = None,
    n_jobs: int = 1,
) -> MCReport:
    """Bias and RMSE of each optimizer variant over ``reps`` shared replicates.

    Non-converged fits are kept in the summaries; their share is reported.
    """
    if int(reps) < 1:
        raise UsageError("reps must be >= 1")
    if not variants:
        raise UsageError("at least one variant is required")
    cfg = cfg or OptimizerConfig()
    variants = [normalize_variant(v) for v in variants]
    t0 = _time.perf_counter()
    if n_jobs == 1:
        results = [_one_replicate(setting, r, variants, cfg) for r in range(reps)]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_one_replicate)(setting, r, variants, cfg) for r in range(reps))
    wall = _time.perf_counter() - t0
    truths = np.array([r[0] for r in results])
    estimates = np.array([[r[1][v] for r in results] for v in range(len(variants))])
    converged = np.array([[r[2][v] for r in results] for v in range(len(variants))], dtype=bool)
    iterations = np.array([[r[3][v] for r in results] for v in range(len(variants))], dtype=np.int64)
    return MCReport(
        setting=setting,
        variants=list(variants),
        estimates=estimates,
        truths=truths,
        converged=converged,
        iterations=iterations,
        dataset_hashes=[r[4] for r in results],
        wall_time=wall,
        config=cfg.to_dict(),
    )
