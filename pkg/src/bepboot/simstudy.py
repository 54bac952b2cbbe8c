"""Repeated-pilot simulation studies comparing power and expected-power metrics.

Study 1 draws univariate normal pilots and plans a two-sided one-sample
test.  Study 2 draws bivariate lognormal pilots and plans an
intersection-union test on the log scale; it adds a deliberately
misspecified (raw-scale normal) model-based comparator.

Every replication gets its own pilot stream and one stream per metric, all
derived from ``config.seed``, so reports are reproducible for any worker
count.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _parallel
from .analytic import (
    NormalPilotSummary,
    conjugate_mvn_bep,
    conjugate_normal_bep,
    misspecified_normal_bep,
    plugin_normal_power,
    z_power_two_sided,
)
from .core import BepError, PilotDataset, TrialPlan, derive_seed, make_rng_stream
from .estimators import bbs_bep, bootstrap_power, bs2_power_distribution
from .rules import IntersectionUnionRule, OneSampleRule

METRIC_ORDER = (
    "model_based_bep",
    "wrong_model_bep",
    "bbs_bep",
    "bs2_bep",
    "model_based_power",
    "bootstrap_power",
)


class SimStudyError(BepError, RuntimeError):
    """An estimator failed inside the harness; names the pilot size and replication."""

    def __init__(self, pilot_size: int, replication: int, cause: BaseException):
        self.pilot_size = pilot_size
        self.replication = replication
        self.cause = cause
        super().__init__(f"pilot_size={pilot_size}, replication={replication}: {cause}")

    def __reduce__(self):
        return (type(self), (self.pilot_size, self.replication, self.cause))


@dataclass(frozen=True)
class SimStudyConfig:
    """Settings of one simulation study.

    Unset ``pilot_sizes``, ``replications`` and ``future_n`` take the
    study's full-scale values (study 1: sizes 10/30/100, 2500 replications,
    ``future_n=500``; study 2: sizes 10/30/50, 1000 replications,
    ``future_n=80``).  ``metrics`` restricts the computed metrics.
    """

    study: int = 1
    pilot_sizes: Optional[tuple[int, ...]] = None
    replications: Optional[int] = None
    m: int = 1000
    t: int = 1
    seed: int = 0
    alpha: float = 0.05
    future_n: Optional[int] = None
    metrics: Optional[tuple[str, ...]] = None
    # study 1
    mean: float = 0.15
    sd: float = 1.0
    variant: str = "z"
    # study 2, log scale
    log_mean: tuple[float, float] = (3.0, 5.0)
    log_sd: tuple[float, float] = (1.0, 1.0)
    log_corr: float = 0.65
    thresholds: tuple[float, float] = (2.7, 4.5)

    def __post_init__(self):
        if self.study not in (1, 2):
            raise ValueError(f"study must be 1 or 2, got {self.study}")
        full_sizes, full_reps, full_n = {1: ((10, 30, 100), 2500, 500), 2: ((10, 30, 50), 1000, 80)}[self.study]
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if self.pilot_sizes is None:
            set_("pilot_sizes", full_sizes)
        if self.replications is None:
            set_("replications", full_reps)
        if self.future_n is None:
            set_("future_n", full_n)
        set_("pilot_sizes", tuple(int(n) for n in self.pilot_sizes))
        if not self.pilot_sizes or min(self.pilot_sizes) < 2:
            raise ValueError("pilot sizes must be >= 2")
        if self.study == 2 and min(self.pilot_sizes) <= 2:
            raise ValueError("study 2 needs pilot sizes > 2 for the covariance posterior")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.m < 1 or self.t < 1:
            raise ValueError("m and t must be >= 1")
        available = self.available_metrics()
        if self.metrics is None:
            set_("metrics", available)
        else:
            unknown = set(self.metrics) - set(available)
            if unknown:
                raise ValueError(f"metrics {sorted(unknown)} not available for study {self.study}")
            set_("metrics", tuple(k for k in available if k in self.metrics))

    @classmethod
    def desk(cls, study: int = 1, **overrides) -> "SimStudyConfig":
        """Laptop-scale preset: 200 replications, ``m=2000``."""
        return cls(study=study, **{"replications": 200, "m": 2000, **overrides})

    @classmethod
    def full_scale(cls, study: int = 1, **overrides) -> "SimStudyConfig":
        """Full-scale preset (2500 or 1000 replications)."""
        return cls(study=study, **{"m": 2000, **overrides})

    def available_metrics(self) -> tuple[str, ...]:
        if self.study == 1:
            return tuple(k for k in METRIC_ORDER if k != "wrong_model_bep")
        return METRIC_ORDER

    def plan(self) -> TrialPlan:
        if self.study == 1:
            return TrialPlan(self.future_n, self.alpha, OneSampleRule(0.0, self.variant))
        return TrialPlan(self.future_n, self.alpha, IntersectionUnionRule(self.thresholds, log_transform=True))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def generate_pilot(config: SimStudyConfig, n: int, rng: np.random.Generator) -> PilotDataset:
    """One pilot of ``n`` subjects from the study's generating distribution."""
    if config.study == 1:
        return PilotDataset(config.mean + config.sd * rng.standard_normal(n), ("y",), f"n{n}")
    sd = np.asarray(config.log_sd, dtype=float)
    corr = np.array([[1.0, config.log_corr], [config.log_corr, 1.0]])
    chol = np.linalg.cholesky(corr * np.outer(sd, sd))
    z = np.asarray(config.log_mean) + rng.standard_normal((n, 2)) @ chol.T
    return PilotDataset(np.exp(z), ("y1", "y2"), f"n{n}")


def _metric(name: str, config: SimStudyConfig, pilot: PilotDataset, plan: TrialPlan, seed: int) -> float:
    m, t = config.m, config.t
    if name == "bbs_bep":
        return bbs_bep(pilot, plan, m=m, seed=seed).bep
    if name == "bs2_bep":
        return bs2_power_distribution(pilot, plan, m=m, t=t, seed=seed).bep
    if name == "bootstrap_power":
        return bootstrap_power(pilot, plan, m=m, seed=seed).bep
    if config.study == 1:
        summary = NormalPilotSummary.from_data(pilot)
        if name == "model_based_bep":
            return conjugate_normal_bep(summary, plan, m=m, seed=seed).bep
        return z_power_two_sided(summary.effect_size, plan.future_n, plan.alpha)
    if name == "model_based_bep":
        return conjugate_mvn_bep(pilot, plan, m=m, t=t, seed=seed, log_transform=True).bep
    if name == "wrong_model_bep":
        return misspecified_normal_bep(pilot, plan, m=m, t=t, seed=seed).bep
    return plugin_normal_power(pilot, plan, m=m, seed=seed, log_transform=True).bep


def _run_reps(config: SimStudyConfig, n: int, start: int, stop: int) -> np.ndarray:
    plan = config.plan()
    out = np.empty((stop - start, len(config.metrics)))
    for r in range(start, stop):
        pilot = generate_pilot(config, n, make_rng_stream(derive_seed(config.seed, n, r), 0))
        for k, name in enumerate(config.metrics):
            seed = derive_seed(config.seed, n, r, METRIC_ORDER.index(name) + 1)
            try:
                out[r - start, k] = _metric(name, config, pilot, plan, seed)
            except Exception as exc:
                raise SimStudyError(n, r, exc) from exc
    return out


@dataclass(frozen=True, eq=False)
class SimStudyReport:
    """Per-replication metric values, keyed by pilot size.

    ``values[n]`` is a ``(replications, len(metrics))`` array.
    """

    config: SimStudyConfig
    values: dict = field(default_factory=dict)

    @property
    def metrics(self) -> tuple[str, ...]:
        return self.config.metrics

    def metric(self, pilot_size: int, name: str) -> np.ndarray:
        return self.values[pilot_size][:, self.metrics.index(name)]

    def difference(self, pilot_size: int, a: str, b: str) -> np.ndarray:
        return self.metric(pilot_size, a) - self.metric(pilot_size, b)

    def rows(self) -> list[dict]:
        """One record per (pilot size, replication)."""
        out = []
        for n in self.config.pilot_sizes:
            for r, vals in enumerate(self.values[n]):
                out.append({"pilot_size": n, "replication": r, **dict(zip(self.metrics, map(float, vals)))})
        return out

    def summary(self) -> list[dict]:
        """Mean, SD and MC SE of every pairwise metric difference, per pilot size."""
        out = []
        for n in self.config.pilot_sizes:
            for a, b in itertools.combinations(self.metrics, 2):
                d = self.difference(n, a, b)
                sd = float(np.std(d, ddof=1)) if d.size > 1 else math.nan
                out.append({
                    "pilot_size": n,
                    "difference": f"{a}-{b}",
                    "mean": float(d.mean()),
                    "sd": sd,
                    "se": sd / math.sqrt(d.size),
                    "mean_abs": float(np.abs(d).mean()),
                })
        return out

    def ecdf_grid(self, pilot_size: int, name: str, grid: Optional[Sequence[float]] = None) -> np.ndarray:
        """Empirical CDF of a metric evaluated on ``grid`` (default 0, 0.01, ..., 1)."""
        grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)
        x = np.sort(self.metric(pilot_size, name))
        return np.searchsorted(x, grid, side="right") / x.size

    def write_csv(self, path) -> None:
        """Long format: one line per (pilot size, replication, metric)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["study", "pilot_size", "replication", "metric", "value"])
            for row in self.rows():
                for name in self.metrics:
                    w.writerow([self.config.study, row["pilot_size"], row["replication"], name, f"{row[name]:.6f}"])

    def write_ecdf_csv(self, path, grid: Optional[Sequence[float]] = None) -> None:
        """Plot-ready ECDF grids: one line per (pilot size, metric, grid point)."""
        grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["pilot_size", "metric", "x", "ecdf"])
            for n in self.config.pilot_sizes:
                for name in self.metrics:
                    for x, f in zip(grid, self.ecdf_grid(n, name, grid)):
                        w.writerow([n, name, f"{x:.4f}", f"{f:.6f}"])


def run_sim_study(config: SimStudyConfig, workers: int = 1) -> SimStudyReport:
    """Run every replication at every pilot size; parallel over replications.

    Estimators inside the harness always run single-process.
    """
    workers = _parallel.resolve_workers(workers)
    reps = config.replications
    chunk = reps if workers == 1 else max(1, math.ceil(reps / (4 * workers)))
    tasks = [(config, n, s, min(s + chunk, reps)) for n in config.pilot_sizes for s in range(0, reps, chunk)]
    parts = iter(_parallel.run_tasks(_run_reps, tasks, workers))
    values = {}
    for n in config.pilot_sizes:
        values[n] = np.concatenate([next(parts) for _ in range(0, reps, chunk)])
    return SimStudyReport(config, values)


@dataclass(frozen=True)
class CdfCrossing:
    """Where two empirical CDFs cross.

    ``status`` is ``"found"`` (``value`` holds the abscissa), ``"absent"``
    (no sign change inside (0, 1)) or ``"degenerate"`` (the CDFs coincide).
    """

    status: str
    value: float = math.nan


def ecdf_crossing(a, b) -> CdfCrossing:
    """Crossing point of the empirical CDFs of samples ``a`` and ``b``.

    ``F_a - F_b`` is evaluated on the pooled sorted values; a crossing is a
    sign change, located by linear interpolation between the flanking grid
    points.  When there are several, the one flanked by the largest
    excursions on both sides wins.
    """
    a, b = np.sort(np.asarray(a, dtype=float)), np.sort(np.asarray(b, dtype=float))
    grid = np.union1d(a, b)
    d = np.searchsorted(a, grid, side="right") / a.size - np.searchsorted(b, grid, side="right") / b.size
    eps = 1e-12
    if np.all(np.abs(d) <= eps):
        return CdfCrossing("degenerate")
    nz = np.flatnonzero(np.abs(d) > eps)
    sign = np.sign(d[nz])
    # runs of constant sign among the non-zero points
    breaks = np.flatnonzero(sign[1:] != sign[:-1])
    if breaks.size == 0:
        return CdfCrossing("absent")
    edges = np.concatenate([[0], breaks + 1, [nz.size]])
    excursion = [np.abs(d[nz[s:e]]).max() for s, e in zip(edges[:-1], edges[1:])]
    best = max(range(breaks.size), key=lambda i: min(excursion[i], excursion[i + 1]))
    i, k = nz[breaks[best]], nz[breaks[best] + 1]
    x = grid[i] + (grid[k] - grid[i]) * d[i] / (d[i] - d[k])
    if not 0.0 < x < 1.0:
        return CdfCrossing("absent")
    return CdfCrossing("found", float(x))


def summarize_cdf_crossing(
    report: SimStudyReport, power: str = "bootstrap_power", bep: str = "bbs_bep"
) -> dict[int, CdfCrossing]:
    """Crossing of the power and BEP empirical CDFs at each pilot size."""
    if report.config.replications < 100:
        raise ValueError("need at least 100 replications for a crossing estimate")
    return {n: ecdf_crossing(report.metric(n, power), report.metric(n, bep)) for n in report.config.pilot_sizes}
