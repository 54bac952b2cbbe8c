"""Closed-form power and conjugate model-based expected power.

These are the parametric comparators for the bootstrap estimators: exact
z-test and event-driven survival power, expected power under the Jeffreys
normal model, and future-trial simulation under a normal-inverse-Wishart
posterior (optionally on the log scale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import (
    BepEstimate,
    DegeneratePosteriorError,
    InvalidDataError,
    PilotDataset,
    PowerDistribution,
    TrialPlan,
    make_rng_stream,
)
from .estimators import MonteCarloJob, Simulator, run_job
from .rules import OneSampleRule


def z_power_two_sided(delta, future_n: int, alpha: float = 0.05):
    """Power of the two-sided one-sample z-test at standardised effect ``delta``.

    ``Phi(|d| sqrt(n) - z) + Phi(-|d| sqrt(n) - z)`` with ``z`` the upper
    ``alpha/2`` normal quantile.  Vectorised over ``delta``.
    """
    if future_n < 1:
        raise ValueError("future_n must be >= 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    z = stats.norm.isf(alpha / 2.0)
    shift = np.abs(np.asarray(delta, dtype=float)) * math.sqrt(future_n)
    # isf/sf keep precision in the upper tail where cdf would round to 1
    power = stats.norm.sf(z - shift) + stats.norm.cdf(-shift - z)
    return float(power) if np.ndim(power) == 0 else power


def survival_power(gamma, event_free_prob: float, future_n: int, alpha: float = 0.05):
    """Event-driven power for testing a log hazard ratio ``gamma`` against 0.

    ``Phi(sqrt(d * gamma^2) / 2 - z)`` where ``d = future_n * (1 - p)`` is the
    expected number of events and ``z`` the upper ``alpha/2`` quantile.
    """
    if not 0 <= event_free_prob < 1:
        raise ValueError("event_free_prob must lie in [0, 1)")
    if future_n < 1:
        raise ValueError("future_n must be >= 1")
    events = future_n * (1.0 - event_free_prob)
    g = np.asarray(gamma, dtype=float)
    power = stats.norm.cdf(np.sqrt(events * g**2) / 2.0 - stats.norm.isf(alpha / 2.0))
    return float(power) if np.ndim(power) == 0 else power


@dataclass(frozen=True)
class NormalPilotSummary:
    n: int
    mean: float
    sd: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not self.sd >= 0:
            raise ValueError("sd must be >= 0")

    @classmethod
    def from_data(cls, data, column: int = 0) -> "NormalPilotSummary":
        x = data.column(column) if isinstance(data, PilotDataset) else np.asarray(data, dtype=float)
        return cls(int(x.size), float(np.mean(x)), float(np.std(x, ddof=1)))

    @property
    def effect_size(self) -> float:
        return self.mean / self.sd


def conjugate_normal_bep(summary: NormalPilotSummary, plan: TrialPlan, m: int = 1000, seed: int = 0) -> PowerDistribution:
    """Expected two-sided z-test power under the Jeffreys prior p(mu, s^2) ~ 1/s^2.

    Draws ``sigma^2 = (n-1) s^2 / chi2_{n-1}`` and ``mu | sigma^2 ~ N(ybar,
    sigma^2 / n)``, and evaluates the closed-form power at each
    ``(mu - null) / sigma``.  The null comes from ``plan.rule`` when it is a
    one-sample rule, otherwise 0.
    """
    if summary.sd <= 0:
        raise DegeneratePosteriorError("pilot SD is zero; the normal posterior is degenerate")
    if m < 1:
        raise ValueError("m must be >= 1")
    null = plan.rule.null_mean if isinstance(plan.rule, OneSampleRule) else 0.0
    rng = make_rng_stream(seed, 0)
    n = summary.n
    sigma2 = (n - 1) * summary.sd**2 / rng.chisquare(n - 1, size=m)
    mu = summary.mean + np.sqrt(sigma2 / n) * rng.standard_normal(m)
    power = z_power_two_sided((mu - null) / np.sqrt(sigma2), plan.future_n, plan.alpha)
    return PowerDistribution(np.atleast_1d(power), t=None, meta={"method": "conjugate_normal", "seed": seed})


def _scatter(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = z.mean(axis=0)
    resid = z - mean
    return mean, resid.T @ resid


def sample_normal_inverse_wishart(mean: np.ndarray, scatter_inv_chol: np.ndarray, n: int, rng: np.random.Generator):
    """One draw of ``(mu, C)`` with ``C C' = Sigma`` from the flat-prior NIW posterior.

    ``Sigma^-1 ~ Wishart(n - 1, S^-1)`` via the Bartlett decomposition
    ``Sigma^-1 = (L A)(L A)'`` with ``L`` the Cholesky factor of ``S^-1``;
    then ``C = (L A)^-T`` and ``mu = mean + C z / sqrt(n)``.
    """
    p = mean.size
    nu = n - 1
    a = np.zeros((p, p))
    a[np.diag_indices(p)] = np.sqrt(rng.chisquare(nu - np.arange(p)))
    a[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    b = scatter_inv_chol @ a
    c = np.linalg.inv(b).T
    mu = mean + c @ rng.standard_normal(p) / math.sqrt(n)
    return mu, c


def _prepare(pilot: PilotDataset, log_transform: bool):
    z = pilot.rows
    if pilot.n <= pilot.p:
        raise DegeneratePosteriorError(f"need n > p for the covariance posterior (n={pilot.n}, p={pilot.p})")
    if log_transform:
        if not np.all(z > 0):
            raise InvalidDataError("log_transform requires strictly positive pilot values")
        z = np.log(z)
    mean, scatter = _scatter(z)
    try:
        if np.linalg.matrix_rank(scatter) < pilot.p:
            raise np.linalg.LinAlgError
        return mean, np.linalg.cholesky(np.linalg.inv(scatter))
    except np.linalg.LinAlgError:
        raise DegeneratePosteriorError("sample covariance is singular") from None


@dataclass(frozen=True, eq=False)
class NormalPosteriorSimulator(Simulator):
    """Future trials from N(mu, Sigma) with (mu, Sigma) drawn from the NIW posterior."""

    mean: np.ndarray
    scatter_inv_chol: np.ndarray
    n: int
    exponentiate: bool

    @property
    def p(self) -> int:
        return self.mean.size

    def population(self, rng):
        return sample_normal_inverse_wishart(self.mean, self.scatter_inv_chol, self.n, rng)

    def trial(self, population, future_n, rng):
        mu, c = population
        x = mu + rng.standard_normal((future_n, self.p)) @ c.T
        return np.exp(x) if self.exponentiate else x


def lognormal_from_moments(mean: np.ndarray, cov: np.ndarray):
    """Log-scale ``(mu, Sigma)`` of the lognormal with the given raw-scale moments.

    Returns ``None`` when no lognormal has those moments (a non-positive
    mean or a non-positive-definite implied log covariance).
    """
    if np.any(mean <= 0):
        return None
    ratio = 1.0 + cov / np.outer(mean, mean)
    if np.any(ratio <= 0):
        return None
    log_cov = np.log(ratio)
    try:
        chol = np.linalg.cholesky(log_cov)
    except np.linalg.LinAlgError:
        return None
    return np.log(mean) - np.diag(log_cov) / 2.0, chol


@dataclass(frozen=True, eq=False)
class MomentMatchedSimulator(NormalPosteriorSimulator):
    """Raw-scale normal posterior carried to lognormal future data by moment matching."""

    def population(self, rng):
        mu, c = super().population(rng)
        return lognormal_from_moments(mu, c @ c.T)


def conjugate_mvn_bep(
    pilot: PilotDataset,
    plan: TrialPlan,
    m: int = 1000,
    t: int = 1,
    seed: int = 0,
    log_transform: bool = False,
    workers: int = 1,
) -> PowerDistribution:
    """Expected power under the normal model with prior p(mu, Sigma) ~ |Sigma|^-(p+1)/2.

    Each of ``m`` posterior draws feeds ``t`` simulated future trials that
    are analysed with ``plan.rule``.  With ``log_transform`` the model is
    fitted to log data and future data are exponentiated (a lognormal
    model); otherwise the model and the future data stay on the raw scale.
    """
    mean, inv_chol = _prepare(pilot, log_transform)
    sim = NormalPosteriorSimulator(mean, inv_chol, pilot.n, log_transform)
    counts = run_job(MonteCarloJob(sim, plan, t, seed), m, workers)
    return PowerDistribution(counts / t, t=t, meta={"method": "conjugate_mvn", "log_transform": log_transform})


def misspecified_normal_bep(
    pilot: PilotDataset,
    plan: TrialPlan,
    m: int = 1000,
    t: int = 1,
    seed: int = 0,
    workers: int = 1,
) -> PowerDistribution:
    """Expected power from a normal model wrongly fitted to positive, skewed data.

    The normal-inverse-Wishart posterior is fitted on the raw scale.  Each
    draw's mean and covariance are mapped to the lognormal with the same
    first two moments, so future data can go through a log-scale analysis.
    Draws with no such lognormal count as failed trials.
    """
    mean, inv_chol = _prepare(pilot, False)
    sim = MomentMatchedSimulator(mean, inv_chol, pilot.n, True)
    job = MonteCarloJob(sim, plan, t, seed)
    counts = run_job(job, m, workers)
    return PowerDistribution(counts / t, t=t, meta={"method": "misspecified_normal"})


@dataclass(frozen=True, eq=False)
class _FixedNormalSimulator(Simulator):
    mean: np.ndarray
    chol: np.ndarray
    exponentiate: bool

    @property
    def p(self) -> int:
        return self.mean.size

    def population(self, rng):
        return self.mean, self.chol

    def trial(self, population, future_n, rng):
        mu, c = population
        x = mu + rng.standard_normal((future_n, self.p)) @ c.T
        return np.exp(x) if self.exponentiate else x


def plugin_normal_power(
    pilot: PilotDataset,
    plan: TrialPlan,
    m: int = 1000,
    seed: int = 0,
    log_transform: bool = False,
    workers: int = 1,
) -> BepEstimate:
    """Classical power by simulation at the pilot's point estimates (mean, covariance)."""
    z = pilot.rows
    if log_transform:
        if not np.all(z > 0):
            raise InvalidDataError("log_transform requires strictly positive pilot values")
        z = np.log(z)
    cov = np.atleast_2d(np.cov(z, rowvar=False))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DegeneratePosteriorError("sample covariance is singular") from None
    sim = _FixedNormalSimulator(z.mean(axis=0), chol, log_transform)
    return BepEstimate.from_rejections(run_job(MonteCarloJob(sim, plan, 1, seed), m, workers))
