"""Shared domain types, errors and the random-stream contract.

Every stochastic routine in the package draws from streams produced by
:func:`make_rng_stream`.  A stream is a Philox counter-based generator whose
key is derived from a 64-bit master seed and whose counter is offset by the
iteration index, so the randomness consumed by iteration ``j`` never depends
on which worker executes it or in what order.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

MAX_SEED = 2**64 - 1


class BepError(Exception):
    """Base class for errors raised by this package."""


class InvalidDatasetError(BepError, ValueError):
    """A dataset violates the pilot-data invariants (too few rows, NaNs, ...)."""


class InvalidDataError(BepError, ValueError):
    """Data handed to a rejection rule cannot be analysed (e.g. log of <= 0)."""


class DegeneratePosteriorError(BepError, ValueError):
    """The pilot summary does not define a proper posterior."""


class EstimationError(BepError, RuntimeError):
    """A Monte Carlo iteration failed; carries the offending iteration index."""

    def __init__(self, iteration: int, cause: BaseException):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"iteration {iteration}: {cause}")

    def __reduce__(self):
        return (type(self), (self.iteration, self.cause))


@functools.lru_cache(maxsize=256)
def _philox_key(master_seed: int) -> tuple[int, int]:
    state = np.random.SeedSequence(master_seed).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def make_rng_stream(master_seed: int, iteration_index: int, sub_index: int = 0) -> np.random.Generator:
    """Return the random stream owned by ``(master_seed, iteration_index, sub_index)``.

    The master seed is hashed into a 128-bit Philox key; the iteration and
    sub-index occupy the two high counter words, leaving 2**128 blocks of
    headroom per stream.  Estimators reserve ``sub_index=0`` for the outer
    (population) draw of iteration ``j`` and ``sub_index=l+1`` for its
    ``l``-th simulated trial.
    """
    if iteration_index < 0 or sub_index < 0:
        raise ValueError("iteration_index and sub_index must be non-negative")
    if not 0 <= master_seed <= MAX_SEED:
        raise ValueError("master_seed must be a 64-bit unsigned integer")
    key = np.array(_philox_key(int(master_seed)), dtype=np.uint64)
    counter = np.array([0, 0, sub_index, iteration_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class StreamCursor:
    """Re-targets one Philox generator at successive ``(j, sub)`` streams.

    Produces exactly the streams of :func:`make_rng_stream` at less than half
    the cost.  The generator returned by :meth:`at` is shared and only valid
    until the next call.
    """

    def __init__(self, master_seed: int):
        self._key = np.array(_philox_key(int(master_seed)), dtype=np.uint64)
        self._bitgen = np.random.Philox(key=self._key)
        self._gen = np.random.Generator(self._bitgen)
        self._buffer = np.zeros(4, dtype=np.uint64)

    def at(self, iteration_index: int, sub_index: int = 0) -> np.random.Generator:
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array([0, 0, sub_index, iteration_index], dtype=np.uint64),
                "key": self._key,
            },
            "buffer": self._buffer,
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen


def derive_seed(master_seed: int, *path: int) -> int:
    """Hash ``master_seed`` and an integer path into a fresh 64-bit seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def _frozen_array(values: Any, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr[:, None]
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PilotDataset:
    """Individual-level pilot data: ``n`` subjects (rows) by ``p`` attributes.

    Rows are the exchangeable resampling unit; the columns of a row always
    travel together.
    """

    rows: np.ndarray
    column_names: Optional[tuple[str, ...]] = None
    study_id: str = "pilot"

    def __post_init__(self):
        rows = _frozen_array(self.rows, 2)
        if rows.ndim != 2:
            raise InvalidDatasetError(f"rows must be a 2-d matrix, got shape {rows.shape}")
        if rows.shape[0] < 2:
            raise InvalidDatasetError(f"need at least 2 subjects, got {rows.shape[0]}")
        if rows.shape[1] < 1:
            raise InvalidDatasetError("need at least one attribute column")
        if not np.all(np.isfinite(rows)):
            i, k = np.argwhere(~np.isfinite(rows))[0]
            raise InvalidDatasetError(f"non-finite value at row {i}, column {k}")
        names = self.column_names
        if names is None:
            names = tuple(f"y{k + 1}" if rows.shape[1] > 1 else "y" for k in range(rows.shape[1]))
        names = tuple(str(c) for c in names)
        if len(names) != rows.shape[1]:
            raise InvalidDatasetError(f"{len(names)} column names for {rows.shape[1]} columns")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]

    def take(self, indices: np.ndarray) -> "PilotDataset":
        """Dataset made of the rows at ``indices`` (same schema)."""
        return PilotDataset(self.rows[np.asarray(indices)], self.column_names, self.study_id)

    def column(self, key: int | str) -> np.ndarray:
        return self.rows[:, self.column_index(key)]

    def column_index(self, key: int | str) -> int:
        if isinstance(key, str):
            try:
                return self.column_names.index(key)
            except ValueError:
                raise KeyError(f"no column named {key!r}; have {list(self.column_names)}") from None
        if not -self.p <= key < self.p:
            raise IndexError(f"column index {key} out of range for p={self.p}")
        return key % self.p

    def __eq__(self, other):
        if not isinstance(other, PilotDataset):
            return NotImplemented
        return (
            self.column_names == other.column_names
            and self.study_id == other.study_id
            and np.array_equal(self.rows, other.rows)
        )

    __hash__ = None


@dataclass(frozen=True)
class TrialPlan:
    """What is fixed about the planned trial: size, level and analysis."""

    future_n: int
    alpha: float = 0.05
    rule: Any = None

    def __post_init__(self):
        if int(self.future_n) != self.future_n or self.future_n < 2:
            raise ValueError(f"future_n must be an integer >= 2, got {self.future_n}")
        if not 0.0 < self.alpha <= 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5], got {self.alpha}")
        object.__setattr__(self, "future_n", int(self.future_n))
        if self.rule is None:
            from .rules import OneSampleRule

            object.__setattr__(self, "rule", OneSampleRule())


@dataclass(frozen=True, eq=False)
class ResampleWeights:
    """A point on the probability simplex over the pilot rows."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights, 1)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, n: int) -> "ResampleWeights":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class DirichletPrior:
    """Dirichlet hyper-parameter(s) placed on the pilot-row probabilities.

    ``alpha_k=0`` (the default) yields the flat posterior D(1, ..., 1).
    A vector gives one hyper-parameter per row.
    """

    alpha_k: float | Sequence[float] = 0.0

    def __post_init__(self):
        a = np.asarray(self.alpha_k, dtype=float)
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValueError("alpha_k must be finite and >= 0")
        if a.ndim > 1:
            raise ValueError("alpha_k must be a scalar or a vector")
        if a.ndim == 1:
            object.__setattr__(self, "alpha_k", tuple(float(x) for x in a))
        else:
            object.__setattr__(self, "alpha_k", float(a))

    def posterior_shape(self, n: int) -> np.ndarray:
        """Dirichlet posterior parameters (alpha_k + 1) for ``n`` distinct rows."""
        a = np.asarray(self.alpha_k, dtype=float)
        if a.ndim == 1 and a.size != n:
            raise ValueError(f"prior has {a.size} hyper-parameters but data has {n} rows")
        return np.broadcast_to(a + 1.0, (n,)).copy()


@dataclass(frozen=True)
class TestOutcome:
    """Result of applying a rejection rule to one simulated dataset."""

    __test__ = False  # not a pytest class

    rejected: bool
    statistic: float = math.nan
    detail: Optional[dict] = None


@dataclass(frozen=True, eq=False)
class PowerDistribution:
    """``m`` draws of per-draw power and their mean (the expected power).

    ``t`` is the number of simulated trials behind each draw; ``t=None``
    marks draws whose power was evaluated in closed form.
    """

    samples: np.ndarray
    t: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = _frozen_array(self.samples, 1)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a non-empty vector")
        if np.any((s < 0) | (s > 1)):
            raise ValueError("power samples must lie in [0, 1]")
        object.__setattr__(self, "samples", s)

    @property
    def m(self) -> int:
        return self.samples.size

    @property
    def bep(self) -> float:
        return float(np.mean(self.samples))

    @property
    def mc_se(self) -> float:
        if self.m < 2:
            return math.nan
        return float(np.std(self.samples, ddof=1) / math.sqrt(self.m))

    def quantile(self, q):
        return np.quantile(self.samples, q)

    def to_estimate(self) -> "BepEstimate":
        return BepEstimate(self.bep, self.mc_se, self.m)


@dataclass(frozen=True)
class BepEstimate:
    """Single-loop Monte Carlo estimate of a rejection probability."""

    bep: float
    mc_se: float
    m: int

    @classmethod
    def from_rejections(cls, rejections: np.ndarray) -> "BepEstimate":
        rejections = np.asarray(rejections)
        m = rejections.size
        p = float(np.count_nonzero(rejections)) / m
        return cls(p, math.sqrt(p * (1.0 - p) / m), m)
