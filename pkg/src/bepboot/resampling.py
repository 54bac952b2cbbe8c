"""Dirichlet posterior draws and future-trial resampling.

All samplers map sorted uniforms through an inverse CDF over row
probabilities, so plain bootstrap resampling is literally weighted
resampling with uniform weights and consumes the random stream identically.
Resampled rows therefore come out grouped by source row; every rule in the
package is invariant to row order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DirichletPrior, InvalidDatasetError, PilotDataset, ResampleWeights


def dirichlet_vector(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet(shape) draw by normalising independent Gamma(shape, 1) draws."""
    g = rng.standard_gamma(shape)
    w = g / g.sum()
    # pin the sum to 1 up to the last ulp
    w[-1] = max(0.0, 1.0 - w[:-1].sum())
    return w


def draw_dirichlet_weights(n: int, prior: DirichletPrior, rng: np.random.Generator) -> ResampleWeights:
    """Draw row probabilities from the Dirichlet posterior D(alpha_1+1, ..., alpha_n+1)."""
    if n < 2:
        raise InvalidDatasetError(f"need at least 2 rows to resample, got {n}")
    return ResampleWeights(dirichlet_vector(prior.posterior_shape(n), rng))


def probability_cdf(weights: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def indices_from_cdf(cdf: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    # sorted keys make the binary searches cache- and branch-friendly
    return np.searchsorted(cdf, np.sort(rng.random(size)), side="right")


def weighted_indices(weights: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices drawn i.i.d. with probabilities ``weights`` (returned sorted)."""
    return indices_from_cdf(probability_cdf(weights), size, rng)


def uniform_indices(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return weighted_indices(np.full(n, 1.0 / n), size, rng)


def weighted_resample(
    pilot: PilotDataset, weights: ResampleWeights, future_n: int, rng: np.random.Generator
) -> PilotDataset:
    """Multinomial resample of ``future_n`` rows with probabilities ``weights``."""
    if weights.n != pilot.n:
        raise ValueError(f"weights have length {weights.n} but pilot has {pilot.n} rows")
    if future_n < 1:
        raise ValueError("future_n must be positive")
    return pilot.take(weighted_indices(weights.weights, future_n, rng))


def simple_resample(pilot: PilotDataset, future_n: int, rng: np.random.Generator) -> PilotDataset:
    """Ordinary bootstrap: ``future_n`` rows uniformly with replacement."""
    return weighted_resample(pilot, ResampleWeights.uniform(pilot.n), future_n, rng)


@dataclass(frozen=True, eq=False)
class StudyCollection:
    """Several pilot studies sharing one column schema.

    Without explicit ``study_weights`` each study is weighted by its size.
    """

    studies: tuple[PilotDataset, ...]
    study_weights: Optional[Sequence[float]] = None

    def __post_init__(self):
        studies = tuple(self.studies)
        if not studies:
            raise ValueError("need at least one study")
        first = studies[0]
        for s in studies[1:]:
            if s.p != first.p or s.column_names != first.column_names:
                raise ValueError(
                    f"study {s.study_id!r} columns {list(s.column_names)} differ from "
                    f"{first.study_id!r} columns {list(first.column_names)}"
                )
        object.__setattr__(self, "studies", studies)
        if self.study_weights is not None:
            w = np.asarray(self.study_weights, dtype=float)
            if w.shape != (len(studies),):
                raise ValueError("need one weight per study")
            if np.any(w < 0) or not np.any(w > 0) or not np.all(np.isfinite(w)):
                raise ValueError("study weights must be non-negative, finite, not all zero")
            object.__setattr__(self, "study_weights", tuple(float(x) for x in w))

    @property
    def p(self) -> int:
        return self.studies[0].p

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s.n for s in self.studies])

    def effective_weights(self) -> np.ndarray:
        w = self.sizes.astype(float) if self.study_weights is None else np.array(self.study_weights)
        return w / w.sum()

    def stacked_rows(self) -> np.ndarray:
        return np.concatenate([s.rows for s in self.studies])

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]])


def two_stage_indices(
    study_cdf: np.ndarray,
    within_cdfs: Sequence[np.ndarray],
    offsets: np.ndarray,
    size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Pick a study per subject, then a row within it.

    Takes cumulative probabilities (see :func:`probability_cdf`) for the
    studies and for the rows of each study.  Returns ``(study_index,
    stacked_row_index)``.
    """
    study = indices_from_cdf(study_cdf, size, rng)
    counts = np.bincount(study, minlength=len(within_cdfs))
    rows = np.concatenate(
        [offsets[s] + indices_from_cdf(cdf, int(counts[s]), rng) for s, cdf in enumerate(within_cdfs)]
    )
    return study, rows


def two_stage_resample(
    studies: StudyCollection,
    prior: DirichletPrior,
    future_n: int,
    rng: np.random.Generator,
    *,
    return_provenance: bool = False,
):
    """Multi-study Bayesian bootstrap of one future trial.

    One set of Dirichlet weights is drawn per study (reused for all
    ``future_n`` subjects); each subject first picks a study with
    probability proportional to the study weight, then a row within it.
    """
    within = [probability_cdf(draw_dirichlet_weights(s.n, prior, rng).weights) for s in studies.studies]
    study, rows = two_stage_indices(
        probability_cdf(studies.effective_weights()), within, studies.offsets(), future_n, rng
    )
    first = studies.studies[0]
    out = PilotDataset(studies.stacked_rows()[rows], first.column_names, "resampled")
    if return_provenance:
        return out, study
    return out
