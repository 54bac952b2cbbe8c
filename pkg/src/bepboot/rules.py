"""Planned analyses applied to simulated future trials.

Each rule maps a dataset to reject / do-not-reject.  Rules evaluate either a
single ``(n, p)`` dataset (:meth:`RejectionRule.evaluate`) or a stack of
``(batch, n, p)`` datasets at once (:meth:`RejectionRule.reject_batch`); both
paths share the same kernels so they agree bit for bit.

Zero-variance samples, which the bootstrap produces whenever one row is
drawn ``n`` times, are decided from the sample mean alone instead of being
discarded.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass
from typing import ClassVar, Optional

import numpy as np
from scipy import stats

from .core import InvalidDataError, PilotDataset, TestOutcome

__all__ = [
    "RejectionRule",
    "OneSampleRule",
    "IntersectionUnionRule",
    "TostRule",
    "one_sample_test",
    "intersection_onesided_t",
    "tost_equivalence",
    "rule_from_dict",
    "parse_rule",
]


@functools.lru_cache(maxsize=1024)
def _normal_quantile(q: float) -> float:
    return float(stats.norm.ppf(q))


@functools.lru_cache(maxsize=1024)
def _t_quantile(q: float, df: int) -> float:
    return float(stats.t.ppf(q, df))


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, PilotDataset):
        return data.rows
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected an (n, p) dataset, got shape {arr.shape}")
    return arr


def _column_moments(x: np.ndarray):
    """Mean, SD (n-1 divisor) and zero-variance flag along axis 1 of ``(B, n, ...)``."""
    n = x.shape[1]
    if n < 2:
        raise InvalidDataError("need at least 2 observations per simulated trial")
    mean = x.mean(axis=1)
    sd = x.std(axis=1, ddof=1)
    degenerate = np.all(x == x[:, :1], axis=1)
    # the mean of identical values is that value exactly
    mean = np.where(degenerate, x[:, 0], mean)
    sd = np.where(degenerate, 0.0, sd)
    return mean, sd, degenerate


def _log_columns(x: np.ndarray) -> np.ndarray:
    if not np.all(x > 0):
        raise InvalidDataError("log_transform requires strictly positive values")
    return np.log(x)


class RejectionRule:
    """Base class; subclasses implement :meth:`_kernel` on ``(B, n, p)`` stacks."""

    kind: ClassVar[str] = ""

    def reject_batch(self, data: np.ndarray, alpha: float) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if data.ndim != 3:
            raise ValueError(f"expected a (batch, n, p) stack, got shape {data.shape}")
        return self._kernel(data, alpha)[0]

    def evaluate(self, data, alpha: float) -> TestOutcome:
        x = _as_matrix(data)
        rejected, statistic, detail = self._kernel(x[None, :, :], alpha)
        return TestOutcome(bool(rejected[0]), float(statistic[0]), {k: v[0] for k, v in detail.items()})

    def _kernel(self, data: np.ndarray, alpha: float):
        raise NotImplementedError

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        d.update(asdict(self))
        return d


@dataclass(frozen=True)
class OneSampleRule(RejectionRule):
    """Two-sided test of H0: mean == ``null_mean`` on one column.

    ``variant='z'`` compares to normal quantiles, ``'t'`` to Student-t with
    n-1 df; both studentise with the sample SD.
    """

    null_mean: float = 0.0
    variant: str = "z"
    column: int = 0

    def __post_init__(self):
        if self.variant not in ("z", "t"):
            raise ValueError(f"variant must be 'z' or 't', got {self.variant!r}")

    @property
    def kind(self) -> str:  # type: ignore[override]
        return f"one_sample_{self.variant}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "null_mean": self.null_mean, "column": self.column}

    def _kernel(self, data, alpha):
        x = data[:, :, self.column]
        n = x.shape[1]
        mean, sd, degenerate = _column_moments(x)
        diff = mean - self.null_mean
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = diff / (sd / math.sqrt(n))
        stat = np.where(degenerate, np.where(diff == 0, 0.0, np.where(diff > 0, np.inf, -np.inf)), stat)
        if self.variant == "z":
            crit = _normal_quantile(1.0 - alpha / 2.0)
        else:
            crit = _t_quantile(1.0 - alpha / 2.0, n - 1)
        rejected = np.where(degenerate, diff != 0, np.abs(stat) > crit)
        return rejected, stat, {"degenerate": degenerate}


def _select(data: np.ndarray, columns: Optional[tuple[int, ...]]) -> np.ndarray:
    return data if columns is None else data[:, :, list(columns)]


@dataclass(frozen=True)
class IntersectionUnionRule(RejectionRule):
    """Reject only if every column's one-sided t-test of mean <= threshold rejects.

    With ``log_transform`` the tests run on log values, so thresholds refer to
    log-scale location parameters.
    """

    kind: ClassVar[str] = "intersection_onesided_t"

    thresholds: tuple[float, ...] = (0.0,)
    log_transform: bool = False
    columns: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(v) for v in np.atleast_1d(self.thresholds)))
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))
            if len(self.columns) != len(self.thresholds):
                raise ValueError("need one threshold per selected column")

    def _kernel(self, data, alpha):
        x = _select(data, self.columns)
        if x.shape[2] != len(self.thresholds):
            raise ValueError(f"{len(self.thresholds)} thresholds for {x.shape[2]} columns")
        if self.log_transform:
            x = _log_columns(x)
        n = x.shape[1]
        mean, sd, degenerate = _column_moments(x)
        diff = mean - np.asarray(self.thresholds)
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = diff / (sd / math.sqrt(n))
        stat = np.where(degenerate, np.where(diff == 0, 0.0, np.where(diff > 0, np.inf, -np.inf)), stat)
        crit = _t_quantile(1.0 - alpha, n - 1)
        per_column = np.where(degenerate, diff > 0, stat > crit)
        return per_column.all(axis=1), stat.min(axis=1), {"per_column": per_column, "degenerate": degenerate}


@dataclass(frozen=True)
class TostRule(RejectionRule):
    """Equivalence: every column's (1 - 2 alpha) t interval lies inside its bounds.

    Columns hold per-subject differences (or log-ratios).  ``bounds`` is one
    ``(lower, upper)`` pair shared by all columns or one pair per column.
    With ``log_transform`` the bounds are ratios and are compared on the log
    scale, e.g. ``(0.8, 1.25)`` becomes ``(log 0.8, log 1.25)``.
    """

    kind: ClassVar[str] = "tost_equivalence"

    bounds: tuple = ((-1.0, 1.0),)
    log_transform: bool = False
    columns: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim == 1:
            b = b[None, :]
        if b.ndim != 2 or b.shape[1] != 2:
            raise ValueError("bounds must be (lower, upper) or a list of such pairs")
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("each lower bound must be below its upper bound")
        if self.log_transform and np.any(b <= 0):
            raise ValueError("ratio bounds must be positive when log_transform is set")
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in b))
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))

    def _limits(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        b = np.asarray(self.bounds)
        if b.shape[0] == 1:
            b = np.repeat(b, p, axis=0)
        elif b.shape[0] != p:
            raise ValueError(f"{b.shape[0]} bound pairs for {p} columns")
        if self.log_transform:
            b = np.log(b)
        return b[:, 0], b[:, 1]

    def _kernel(self, data, alpha):
        x = _select(data, self.columns)
        n = x.shape[1]
        lo, hi = self._limits(x.shape[2])
        mean, sd, degenerate = _column_moments(x)
        half = _t_quantile(1.0 - alpha, n - 1) * sd / math.sqrt(n)
        lower_ci, upper_ci = mean - half, mean + half
        per_column = (lower_ci > lo) & (upper_ci < hi)
        # a collapsed interval is the mean itself; kept explicit for clarity
        per_column = np.where(degenerate, (mean > lo) & (mean < hi), per_column)
        margin = np.minimum(lower_ci - lo, hi - upper_ci).min(axis=1)
        return per_column.all(axis=1), margin, {"per_column": per_column, "degenerate": degenerate}


def one_sample_test(data, null_mean: float = 0.0, alpha: float = 0.05, variant: str = "z", column: int = 0) -> TestOutcome:
    return OneSampleRule(null_mean, variant, column).evaluate(data, alpha)


def intersection_onesided_t(data, thresholds, alpha: float = 0.05, log_transform: bool = False) -> TestOutcome:
    return IntersectionUnionRule(tuple(thresholds), log_transform).evaluate(data, alpha)


def tost_equivalence(data, bounds, alpha: float = 0.05, log_transform: bool = False) -> TestOutcome:
    return TostRule(bounds, log_transform).evaluate(data, alpha)


_KINDS = {
    "one_sample_z",
    "one_sample_t",
    "intersection_onesided_t",
    "tost_equivalence",
}


def rule_from_dict(spec: dict) -> RejectionRule:
    """Build a rule from its dict form, e.g. ``{"kind": "one_sample_t", "null_mean": 0}``."""
    spec = dict(spec)
    kind = spec.pop("kind", "one_sample_z")
    if kind not in _KINDS:
        raise ValueError(f"unknown rule kind {kind!r}; expected one of {sorted(_KINDS)}")
    if kind.startswith("one_sample_"):
        return OneSampleRule(
            null_mean=float(spec.pop("null_mean", 0.0)),
            variant=kind[-1],
            column=int(spec.pop("column", 0)),
            **_no_extra(spec, kind),
        )
    columns = spec.pop("columns", None)
    columns = None if columns is None else tuple(int(c) for c in np.atleast_1d(columns))
    log = _as_bool(spec.pop("log_transform", False))
    if kind == "intersection_onesided_t":
        thr = tuple(float(v) for v in np.atleast_1d(spec.pop("thresholds")))
        return IntersectionUnionRule(thr, log, columns, **_no_extra(spec, kind))
    bounds = np.asarray(spec.pop("bounds"), dtype=float)
    if bounds.ndim == 1 and bounds.size > 2:
        bounds = bounds.reshape(-1, 2)
    return TostRule(bounds.tolist(), log, columns, **_no_extra(spec, kind))


def _no_extra(spec: dict, kind: str) -> dict:
    if spec:
        raise ValueError(f"unknown parameter(s) for {kind}: {sorted(spec)}")
    return {}


def _as_bool(v) -> bool:
    if isinstance(v, str):
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {v!r}")
    return bool(v)


def parse_rule(text: str) -> RejectionRule:
    """Parse the command-line rule syntax ``kind[:key=value;key=value]``.

    List values are comma separated::

        one_sample_t:null_mean=0
        intersection_onesided_t:thresholds=2.7,4.5;log_transform=true
        tost_equivalence:bounds=0.8,1.25;log_transform=true
    """
    kind, _, rest = text.strip().partition(":")
    spec: dict = {"kind": kind.strip()}
    for item in filter(None, (s.strip() for s in rest.split(";"))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"rule parameter {item!r} is not key=value")
        parts = [v.strip() for v in value.split(",")]
        spec[key.strip()] = parts if len(parts) > 1 else parts[0]
    if "thresholds" in spec:
        spec["thresholds"] = [float(v) for v in np.atleast_1d(spec["thresholds"])]
    if "bounds" in spec:
        spec["bounds"] = [float(v) for v in np.atleast_1d(spec["bounds"])]
    if "columns" in spec:
        spec["columns"] = [int(v) for v in np.atleast_1d(spec["columns"])]
    return rule_from_dict(spec)
