"""Monte Carlo estimators of expected power from pilot data.

=========================  ================================================
``bbs_bep``                Bayesian bootstrap, single loop (one trial per draw)
``bbs_power_distribution`` Bayesian bootstrap, ``t`` trials per Dirichlet draw
``bs2_power_distribution`` double bootstrap (outer resample, inner trials)
``bootstrap_power``        plain bootstrap, i.e. classical power at the
                           pilot's plug-in effect
=========================  ================================================

All four run on one engine.  Outer iteration ``j`` draws its population from
stream ``(seed, j, 0)`` and its ``l``-th trial from ``(seed, j, l + 1)``, so a
run with ``t=1`` reproduces the single-loop estimator exactly, and results do
not depend on the number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import _parallel
from .core import (
    BepEstimate,
    DirichletPrior,
    EstimationError,
    PilotDataset,
    PowerDistribution,
    TrialPlan,
    StreamCursor,
)
from .resampling import (
    StudyCollection,
    dirichlet_vector,
    indices_from_cdf,
    probability_cdf,
    two_stage_indices,
    uniform_indices,
)

PilotLike = Union[PilotDataset, StudyCollection]

# floats materialised per rule evaluation; bounds memory, not results
_BATCH_BUDGET = 1 << 20


class Simulator:
    """Population draw plus future-trial generator consumed by :class:`MonteCarloJob`.

    ``population`` may return ``None`` to mark a draw outside the model's
    support; all of that draw's trials then count as non-rejections.
    """

    p: int

    def population(self, rng: np.random.Generator):
        raise NotImplementedError

    def trial(self, population, future_n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ResamplingSimulator(Simulator):
    """Index resampling from one or several pilot studies.

    ``scheme`` picks the outer draw: ``"bbs"`` draws Dirichlet weights,
    ``"bs2"`` draws bootstrap counts (resampling ``n`` rows with replacement
    and then sampling from that resample is sampling with weights
    ``counts / n``), ``"plain"`` keeps uniform weights.  Populations are
    returned as one cumulative-probability vector per study.
    """

    rows: np.ndarray
    sizes: tuple[int, ...]
    study_cdf: Optional[np.ndarray]
    scheme: str
    shapes: tuple[np.ndarray, ...]
    uniform_cdfs: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, pilot: PilotLike, scheme: str, prior: DirichletPrior = DirichletPrior()):
        if scheme not in ("bbs", "bs2", "plain"):
            raise ValueError(f"unknown scheme {scheme!r}")
        if isinstance(pilot, StudyCollection) and len(pilot.studies) == 1:
            pilot = pilot.studies[0]
        if isinstance(pilot, StudyCollection):
            rows, sizes = pilot.stacked_rows(), tuple(int(n) for n in pilot.sizes)
            study_cdf = probability_cdf(pilot.effective_weights())
        else:
            rows, sizes, study_cdf = pilot.rows, (pilot.n,), None
        shapes = tuple(prior.posterior_shape(n) for n in sizes) if scheme == "bbs" else ()
        uniform = tuple(probability_cdf(np.full(n, 1.0 / n)) for n in sizes) if scheme == "plain" else ()
        return cls(rows, sizes, study_cdf, scheme, shapes, uniform)

    @property
    def p(self) -> int:
        return self.rows.shape[1]

    def population(self, rng):
        if self.scheme == "bbs":
            return [probability_cdf(dirichlet_vector(shape, rng)) for shape in self.shapes]
        if self.scheme == "bs2":
            return [probability_cdf(np.bincount(uniform_indices(n, n, rng), minlength=n) / n) for n in self.sizes]
        return list(self.uniform_cdfs)

    def trial(self, population, future_n, rng):
        if self.study_cdf is None:
            idx = indices_from_cdf(population[0], future_n, rng)
        else:
            offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
            _, idx = two_stage_indices(self.study_cdf, population, offsets, future_n, rng)
        return self.rows[idx]


@dataclass(frozen=True, eq=False)
class MonteCarloJob:
    """Outer loop over ``j``; returns the rejection count of each iteration."""

    simulator: Simulator
    plan: TrialPlan
    t: int
    seed: int

    @property
    def block(self) -> int:
        return max(1, _BATCH_BUDGET // (self.t * self.plan.future_n * self.simulator.p))

    def run(self, start: int, stop: int) -> np.ndarray:
        counts = np.empty(stop - start, dtype=np.int64)
        for b0 in range(start, stop, self.block):
            b1 = min(b0 + self.block, stop)
            counts[b0 - start:b1 - start] = self._run_block(b0, b1)
        return counts

    def _run_block(self, b0: int, b1: int) -> np.ndarray:
        sim, plan, t = self.simulator, self.plan, self.t
        trials, owners = [], []
        streams = StreamCursor(self.seed)
        for j in range(b0, b1):
            try:
                pop = sim.population(streams.at(j, 0))
                if pop is None:
                    continue
                for l in range(t):
                    trials.append(sim.trial(pop, plan.future_n, streams.at(j, l + 1)))
                    owners.append(j - b0)
            except Exception as exc:
                raise EstimationError(j, exc) from exc
        counts = np.zeros(b1 - b0, dtype=np.int64)
        if not trials:
            return counts
        stack = np.stack(trials)
        try:
            rejected = plan.rule.reject_batch(stack, plan.alpha)
        except Exception:
            self._locate_failure(stack, owners, b0)
            raise
        np.add.at(counts, np.asarray(owners), rejected.astype(np.int64))
        return counts

    def _locate_failure(self, stack, owners, b0):
        for data, owner in zip(stack, owners):
            try:
                self.plan.rule.evaluate(data, self.plan.alpha)
            except Exception as exc:
                raise EstimationError(b0 + owner, exc) from exc


def run_job(job: MonteCarloJob, m: int, workers: int = 1) -> np.ndarray:
    """Rejection counts for iterations ``0..m-1``, identical for any worker count."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if job.t < 1:
        raise ValueError("t must be >= 1")
    workers = _parallel.resolve_workers(workers)
    nblocks = math.ceil(m / job.block)
    per_chunk = max(1, math.ceil(nblocks / (4 * workers))) if workers > 1 else nblocks
    step = per_chunk * job.block
    tasks = [(job, s, min(s + step, m)) for s in range(0, m, step)]
    parts = _parallel.run_tasks(_run_chunk, tasks, workers)
    return np.concatenate(parts)


def _run_chunk(job: MonteCarloJob, start: int, stop: int) -> np.ndarray:
    return job.run(start, stop)


def _distribution(counts: np.ndarray, t: int, **meta) -> PowerDistribution:
    return PowerDistribution(counts / t, t=t, meta=meta)


def bbs_bep(
    pilot: PilotLike,
    plan: TrialPlan,
    prior: DirichletPrior = DirichletPrior(),
    m: int = 1000,
    seed: int = 0,
    workers: int = 1,
) -> BepEstimate:
    """Expected power by the Bayesian bootstrap with one future trial per draw.

    Each iteration draws row probabilities from the Dirichlet posterior,
    draws a future trial of ``plan.future_n`` rows from the multinomial with
    those probabilities and applies ``plan.rule``.  The estimate is the
    rejection rate; ``mc_se`` is its binomial standard error.
    """
    job = MonteCarloJob(ResamplingSimulator.build(pilot, "bbs", prior), plan, 1, seed)
    return BepEstimate.from_rejections(run_job(job, m, workers))


def bbs_power_distribution(
    pilot: PilotLike,
    plan: TrialPlan,
    prior: DirichletPrior = DirichletPrior(),
    m: int = 1000,
    t: int = 1,
    seed: int = 0,
    workers: int = 1,
) -> PowerDistribution:
    """Posterior distribution of power: ``t`` trials per Dirichlet draw.

    Sample ``j`` is the rejection fraction among the ``t`` trials that share
    the ``j``-th draw of row probabilities.
    """
    job = MonteCarloJob(ResamplingSimulator.build(pilot, "bbs", prior), plan, t, seed)
    return _distribution(run_job(job, m, workers), t, method="bbs", seed=seed)


def bs2_power_distribution(
    pilot: PilotLike,
    plan: TrialPlan,
    m: int = 1000,
    t: int = 1,
    seed: int = 0,
    workers: int = 1,
) -> PowerDistribution:
    """Double bootstrap: resample the pilot, then simulate ``t`` trials from the resample."""
    job = MonteCarloJob(ResamplingSimulator.build(pilot, "bs2"), plan, t, seed)
    return _distribution(run_job(job, m, workers), t, method="bs2", seed=seed)


def bootstrap_power(
    pilot: PilotLike,
    plan: TrialPlan,
    m: int = 1000,
    seed: int = 0,
    workers: int = 1,
) -> BepEstimate:
    """Classical power at the pilot's empirical distribution (plain bootstrap).

    Treats the pilot as the whole population, so no uncertainty about the
    population is propagated.
    """
    job = MonteCarloJob(ResamplingSimulator.build(pilot, "plain"), plan, 1, seed)
    return BepEstimate.from_rejections(run_job(job, m, workers))
