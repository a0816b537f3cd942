"""Stacked multi-trial datasets, estimand bookkeeping, CSV I/O and validation.

A dataset is stored column-wise (one numpy array per field) and is frozen
after construction. ``ObservedUnit`` is the per-row view for code that wants
records instead of columns.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .glm import DesignMatrix

ALL_SAMPLED = "all-sampled"
TWO_PHASE = "two-phase"
Y_MISSING = "missing"

Scale = Literal["identity", "log10", "binary"]

# Bounds on evaluated g_T, g_A and g_Delta. Loose enough that a rare arm in a
# large pooled sample keeps its true propensity (a floor that binds there
# shrinks the EIF and the standard error with it).
DEFAULT_TRUNCATION = (0.001, 0.999)


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ObservedUnit:
    trial: int
    arm: int
    covariates: Mapping[str, object]
    delta: int
    s: float | None
    y: int | None
    weight_known: float | None = None

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise DomainError(f"delta must be 0 or 1, got {self.delta!r}")
        if self.delta == 0 and self.s is not None:
            raise DomainError("unit with delta=0 cannot carry an immune response")
        if self.weight_known is not None and not 0 < self.weight_known <= 1:
            raise DomainError(f"weight_known must lie in (0, 1], got {self.weight_known}")
        if self.y not in (None, 0, 1):
            raise DomainError(f"y must be 0, 1 or missing, got {self.y!r}")


@dataclass(frozen=True)
class TrialInfo:
    covariates: frozenset[str]
    vaccines: frozenset[int]
    design: Literal["all-sampled", "two-phase"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StackedDataset:
    """One row per participant across every pooled trial.

    Numeric covariates are float arrays with NaN for missing; categorical
    covariates are object arrays with ``None`` for missing. ``s``, ``y`` and
    ``weight`` use NaN for absent values.
    """

    trial: np.ndarray
    arm: np.ndarray
    covariates: Mapping[str, np.ndarray]
    delta: np.ndarray
    s: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    registry: Mapping[int, TrialInfo]

    def __post_init__(self):
        n = len(self.trial)
        cols = {"arm": self.arm, "delta": self.delta, "s": self.s,
                "y": self.y, "weight": self.weight, **self.covariates}
        for name, col in cols.items():
            if len(col) != n:
                raise SchemaError(f"column {name!r} has {len(col)} rows, expected {n}")
        delta = np.asarray(self.delta)
        if not np.all((delta == 0) | (delta == 1)):
            raise DomainError("delta must be 0 or 1")
        s = np.where(delta == 1, np.asarray(self.s, dtype=float), np.nan)
        object.__setattr__(self, "trial", _frozen(np.asarray(self.trial, dtype=np.int64)))
        object.__setattr__(self, "arm", _frozen(np.asarray(self.arm, dtype=np.int64)))
        object.__setattr__(self, "delta", _frozen(delta.astype(np.int8)))
        object.__setattr__(self, "s", _frozen(s))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=float)))
        object.__setattr__(self, "weight", _frozen(np.asarray(self.weight, dtype=float)))
        object.__setattr__(self, "covariates",
                           {k: _frozen(v) for k, v in self.covariates.items()})
        y = self.y[~np.isnan(self.y)]
        if not np.all((y == 0) | (y == 1)):
            raise DomainError("y must be 0, 1 or missing")
        w = self.weight[~np.isnan(self.weight)]
        if np.any((w <= 0) | (w > 1)):
            raise DomainError("known sampling weights must lie in (0, 1]")
        unknown = set(np.unique(self.trial).tolist()) - set(self.registry)
        if unknown:
            raise SchemaError(f"trials {sorted(unknown)} missing from registry")

    @property
    def n(self) -> int:
        return len(self.trial)

    @property
    def trials(self) -> tuple[int, ...]:
        return tuple(sorted(self.registry))

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.covariates)

    @property
    def vaccines(self) -> tuple[int, ...]:
        return tuple(sorted(set().union(*(t.vaccines for t in self.registry.values()))))

    def trials_evaluating(self, arm: int) -> frozenset[int]:
        return frozenset(t for t, info in self.registry.items() if arm in info.vaccines)

    def in_trials(self, trials: Iterable[int]) -> np.ndarray:
        return np.isin(self.trial, list(trials))

    def is_categorical(self, name: str) -> bool:
        return self.covariates[name].dtype == object

    def missing(self, name: str) -> np.ndarray:
        col = self.covariates[name]
        if col.dtype == object:
            return np.array([v is None for v in col], dtype=bool)
        return np.isnan(col)

    @cached_property
    def _y_levels(self) -> np.ndarray:
        out = np.full(self.n, Y_MISSING, dtype=object)
        out[self.y == 0] = "0"
        out[self.y == 1] = "1"
        out.setflags(write=False)
        return out

    def y_levels(self) -> np.ndarray:
        """Y as a three-level categorical: '0', '1' or 'missing'."""
        return self._y_levels

    def feature(self, name: str) -> np.ndarray:
        """Column lookup used by design-matrix encoders.

        ``Y`` and ``A`` are reserved for the outcome levels and the arm."""
        if name == "Y":
            return self.y_levels()
        if name == "A":
            return np.array([str(a) for a in self.arm], dtype=object)
        return self.covariates[name]

    def units(self) -> list[ObservedUnit]:
        out = []
        for i in range(self.n):
            cov = {}
            for k, col in self.covariates.items():
                v = col[i]
                if col.dtype != object:
                    v = None if np.isnan(v) else float(v)
                cov[k] = v
            out.append(ObservedUnit(
                trial=int(self.trial[i]), arm=int(self.arm[i]), covariates=cov,
                delta=int(self.delta[i]),
                s=None if self.delta[i] == 0 else float(self.s[i]),
                y=None if np.isnan(self.y[i]) else int(self.y[i]),
                weight_known=None if np.isnan(self.weight[i]) else float(self.weight[i]),
            ))
        return out

    @classmethod
    def from_arrays(cls, trial, arm, covariates: Mapping[str, np.ndarray], delta, s, y,
                    weight=None, registry: Mapping[int, TrialInfo] | None = None
                    ) -> "StackedDataset":
        n = len(trial)
        weight = np.full(n, np.nan) if weight is None else weight
        if registry is None:
            registry = infer_registry(trial, arm, covariates, delta)
        return cls(trial, arm, dict(covariates), delta, s, y, weight, registry)

    @classmethod
    def from_units(cls, units: Sequence[ObservedUnit],
                   registry: Mapping[int, TrialInfo] | None = None) -> "StackedDataset":
        names: list[str] = []
        for u in units:
            for k in u.covariates:
                if k not in names:
                    names.append(k)
        covs = {}
        for k in names:
            vals = [u.covariates.get(k) for u in units]
            if any(isinstance(v, str) for v in vals):
                covs[k] = np.array(vals, dtype=object)
            else:
                covs[k] = np.array([np.nan if v is None else float(v) for v in vals])
        f = lambda v: np.nan if v is None else float(v)  # noqa: E731
        return cls.from_arrays(
            np.array([u.trial for u in units]), np.array([u.arm for u in units]), covs,
            np.array([u.delta for u in units]), np.array([f(u.s) for u in units]),
            np.array([f(u.y) for u in units]), np.array([f(u.weight_known) for u in units]),
            registry)

    def with_s(self, s: np.ndarray) -> "StackedDataset":
        return replace(self, s=np.asarray(s, dtype=float))

    def with_weight(self, weight: np.ndarray) -> "StackedDataset":
        return replace(self, weight=np.asarray(weight, dtype=float))

    def take(self, rows: np.ndarray) -> "StackedDataset":
        """Row subset; the registry is re-inferred for the trials that remain."""
        rows = np.asarray(rows)
        covs = {k: v[rows] for k, v in self.covariates.items()}
        trial = self.trial[rows]
        kept = set(np.unique(trial).tolist())
        registry = {t: info for t, info in self.registry.items() if t in kept}
        return StackedDataset(trial, self.arm[rows], covs, self.delta[rows], self.s[rows],
                              self.y[rows], self.weight[rows], registry)

    def equals(self, other: "StackedDataset") -> bool:
        if self.n != other.n or list(self.covariates) != list(other.covariates):
            return False
        same = lambda a, b: np.array_equal(a, b, equal_nan=a.dtype != object)  # noqa: E731
        return (same(self.trial, other.trial) and same(self.arm, other.arm)
                and same(self.delta, other.delta) and same(self.s, other.s)
                and same(self.y, other.y) and same(self.weight, other.weight)
                and all(same(self.covariates[k], other.covariates[k]) for k in self.covariates)
                and dict(self.registry) == dict(other.registry))


def infer_registry(trial, arm, covariates: Mapping[str, np.ndarray], delta
                   ) -> dict[int, TrialInfo]:
    trial = np.asarray(trial)
    arm = np.asarray(arm)
    delta = np.asarray(delta)
    registry = {}
    for t in sorted(np.unique(trial).tolist()):
        rows = trial == t
        collected = []
        for name, col in covariates.items():
            c = col[rows]
            present = np.array([v is not None for v in c]) if c.dtype == object \
                else ~np.isnan(c.astype(float))
            if present.any():
                collected.append(name)
        design = ALL_SAMPLED if np.all(delta[rows] == 1) else TWO_PHASE
        registry[int(t)] = TrialInfo(frozenset(collected),
                                     frozenset(int(a) for a in np.unique(arm[rows])), design)
    return registry


# ---------------------------------------------------------------- CSV I/O


@dataclass(frozen=True)
class Schema:
    """Maps the canonical fields onto CSV column names."""

    trial: str = "trial"
    arm: str = "arm"
    delta: str = "delta"
    s: str = "s"
    y: str = "y"
    weight: str = "weight"
    covariates: tuple[str, ...] | None = None  # None: every other column
    categorical: tuple[str, ...] = ()

    def fixed(self) -> tuple[str, ...]:
        return (self.trial, self.arm, self.delta, self.s, self.y, self.weight)


def _parse_float(cell: str, row: int, col: str) -> float:
    if cell.strip() == "":
        return math.nan
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def _parse_int(cell: str, row: int, col: str) -> int:
    v = _parse_float(cell, row, col)
    if math.isnan(v) or v != int(v):
        raise ParseError(f"row {row}, column {col!r}: expected an integer label, got {cell!r}")
    return int(v)


def load_registry_config(path_or_obj) -> dict[int, TrialInfo]:
    """Registry override, JSON of the form
    ``{"1": {"design": "two-phase", "covariates": ["W1"], "vaccines": [1, 3]}}``."""
    obj = path_or_obj
    if isinstance(path_or_obj, (str, Path)):
        obj = json.loads(Path(path_or_obj).read_text(encoding="utf-8"))
    out = {}
    for t, spec in obj.items():
        design = spec["design"]
        if design not in (ALL_SAMPLED, TWO_PHASE):
            raise SchemaError(f"trial {t}: unknown design {design!r}")
        out[int(t)] = TrialInfo(frozenset(spec.get("covariates", ())),
                                frozenset(int(a) for a in spec.get("vaccines", ())), design)
    return out


def load_stacked_csv(path, schema: Schema | None = None,
                     registry=None) -> StackedDataset:
    """Read a stacked CSV (header row, empty cell = missing).

    ``registry`` optionally overrides the inferred per-trial design and
    covariate sets; fields left out of an override entry are inferred.
    """
    schema = schema or Schema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        dup = [c for c, k in Counter(header).items() if k > 1]
        if dup:
            raise SchemaError(f"duplicate column names: {dup}")
        missing = [c for c in (schema.trial, schema.arm, schema.delta) if c not in header]
        if missing:
            raise SchemaError(f"required columns absent: {missing}")
        rows = list(reader)

    idx = {c: i for i, c in enumerate(header)}
    if schema.s not in idx and rows:
        raise SchemaError(f"response column {schema.s!r} absent")
    if schema.covariates is None:
        cov_names = [c for c in header if c not in schema.fixed()]
    else:
        absent = [c for c in schema.covariates if c not in idx]
        if absent:
            raise SchemaError(f"covariate columns absent: {absent}")
        cov_names = list(schema.covariates)

    n = len(rows)
    trial = np.empty(n, dtype=np.int64)
    arm = np.empty(n, dtype=np.int64)
    delta = np.empty(n, dtype=np.int64)
    s = np.full(n, np.nan)
    y = np.full(n, np.nan)
    weight = np.full(n, np.nan)
    covs = {c: (np.empty(n, dtype=object) if c in schema.categorical else np.full(n, np.nan))
            for c in cov_names}
    for i, row in enumerate(rows):
        line = i + 2  # header is line 1
        if len(row) != len(header):
            raise ParseError(f"row {line}: expected {len(header)} cells, found {len(row)}")
        trial[i] = _parse_int(row[idx[schema.trial]], line, schema.trial)
        arm[i] = _parse_int(row[idx[schema.arm]], line, schema.arm)
        d = _parse_float(row[idx[schema.delta]], line, schema.delta)
        if d not in (0.0, 1.0):
            raise DomainError(f"row {line}, column {schema.delta!r}: delta must be 0 or 1")
        delta[i] = int(d)
        if schema.s in idx and delta[i] == 1:
            s[i] = _parse_float(row[idx[schema.s]], line, schema.s)
        if schema.y in idx:
            yv = _parse_float(row[idx[schema.y]], line, schema.y)
            if not (math.isnan(yv) or yv in (0.0, 1.0)):
                raise DomainError(f"row {line}, column {schema.y!r}: y must be 0, 1 or blank")
            y[i] = yv
        if schema.weight in idx:
            wv = _parse_float(row[idx[schema.weight]], line, schema.weight)
            if not (math.isnan(wv) or 0 < wv <= 1):
                raise DomainError(f"row {line}, column {schema.weight!r}: weight must be in (0, 1]")
            weight[i] = wv
        for c in cov_names:
            cell = row[idx[c]]
            if c in schema.categorical:
                covs[c][i] = cell if cell.strip() != "" else None
            else:
                covs[c][i] = _parse_float(cell, line, c)

    inferred = infer_registry(trial, arm, covs, delta)
    if registry is not None:
        override = registry if isinstance(registry, Mapping) and all(
            isinstance(v, TrialInfo) for v in registry.values()) else load_registry_config(registry)
        for t, info in override.items():
            base = inferred.get(t)
            inferred[t] = TrialInfo(
                info.covariates or (base.covariates if base else frozenset()),
                info.vaccines or (base.vaccines if base else frozenset()),
                info.design)
    return StackedDataset(trial, arm, covs, delta, s, y, weight, inferred)


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return ""
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_stacked_csv(ds: StackedDataset, path) -> None:
    header = ["trial", "arm", "delta", "s", "y", "weight", *ds.covariate_names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [str(ds.trial[i]), str(ds.arm[i]), str(ds.delta[i]), _fmt(ds.s[i]),
                   _fmt(ds.y[i]), _fmt(ds.weight[i])]
            for k in ds.covariate_names:
                v = ds.covariates[k][i]
                row.append("" if v is None else (v if isinstance(v, str) else _fmt(v)))
            w.writerow(row)


# ---------------------------------------------------------------- estimands


@dataclass(frozen=True)
class EstimandSpec:
    """Standardized mean of S under vaccine ``vaccine_a`` in trials ``t_ref``.

    ``t_a`` defaults (via :meth:`for_dataset`) to the trials that evaluated
    the vaccine. ``gdelta`` picks known design weights or per-trial
    estimated sampling probabilities; ``margin`` widens the min/max range
    used to map S into (0, 1).
    """

    vaccine_a: int
    t_ref: frozenset[int]
    t_a: frozenset[int]
    w_s: tuple[str, ...] = ()
    w_delta: tuple[str, ...] = ()
    scale: Scale = "identity"
    prob_truncation: tuple[float, float] = DEFAULT_TRUNCATION
    gdelta: Literal["known", "estimate"] = "known"
    margin: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "t_ref", frozenset(self.t_ref))
        object.__setattr__(self, "t_a", frozenset(self.t_a))
        object.__setattr__(self, "w_s", tuple(self.w_s))
        object.__setattr__(self, "w_delta", tuple(self.w_delta))
        if not self.t_ref:
            raise ValueError("referent trial set is empty")
        lo, hi = self.prob_truncation
        if not 0 <= lo < hi <= 1:
            raise ValueError(f"bad truncation bounds {self.prob_truncation}")
        if self.scale not in ("identity", "log10", "binary"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.gdelta not in ("known", "estimate"):
            raise ValueError(f"unknown g_delta mode {self.gdelta!r}")

    @property
    def w_delta_s(self) -> tuple[str, ...]:
        return self.w_s + tuple(c for c in self.w_delta if c not in self.w_s)

    @classmethod
    def for_dataset(cls, ds: StackedDataset, vaccine_a: int, t_ref: Iterable[int],
                    **kw) -> "EstimandSpec":
        return cls(vaccine_a, frozenset(t_ref), ds.trials_evaluating(vaccine_a), **kw)


# ---------------------------------------------------------------- design matrices


def _sorted_levels(values) -> tuple[str, ...]:
    return tuple(sorted({str(v) for v in values if v is not None}))


@dataclass(frozen=True)
class Encoder:
    """Main-terms design for a list of features.

    Categorical features are one-hot expanded with the lexicographically
    first level as reference; levels are learned from the fitting rows, and
    unseen levels at prediction time fall into the reference.
    """

    terms: tuple[tuple[str, tuple[str, ...] | None], ...]

    @classmethod
    def fit(cls, ds: StackedDataset, names: Sequence[str], rows=None) -> "Encoder":
        terms = []
        for name in names:
            col = ds.feature(name)
            if rows is not None:
                col = col[rows]
            if col.dtype == object:
                terms.append((name, _sorted_levels(col)))
            else:
                terms.append((name, None))
        return cls(tuple(terms))

    @property
    def columns(self) -> tuple[str, ...]:
        out = ["(intercept)"]
        for name, levels in self.terms:
            if levels is None:
                out.append(name)
            else:
                out.extend(f"{name}={lv}" for lv in levels[1:])
        return tuple(out)

    def design(self, ds: StackedDataset, rows=None) -> DesignMatrix:
        n = ds.n if rows is None else len(ds.trial[rows])
        cols = [np.ones(n)]
        for name, levels in self.terms:
            col = ds.feature(name)
            if rows is not None:
                col = col[rows]
            if levels is None:
                cols.append(np.asarray(col, dtype=float))
            else:
                cols.extend((col == lv).astype(float) for lv in levels[1:])
        return DesignMatrix(np.column_stack(cols), self.columns)


# ---------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    covariate_availability: dict[tuple[str, int], bool] = field(default_factory=dict)
    positivity_diagnostics: list[dict] = field(default_factory=list)
    sampling_diagnostics: dict[int, tuple[float, float]] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def render(self) -> str:
        lines = [f"validation: {'PASS' if self.ok else 'FAIL'}"]
        lines += [f"  FAIL: {m}" for m in self.failures]
        lines += [f"  WARN: {m}" for m in self.warnings]
        return "\n".join(lines)


MAX_POSITIVITY_LEVELS = 20


def validate(ds: StackedDataset, spec: EstimandSpec) -> ValidationReport:
    """Diagnose a dataset against an estimand. Never raises, never mutates."""
    rep = ValidationReport()
    trials = set(ds.registry)
    bad = sorted((set(spec.t_ref) | set(spec.t_a)) - trials)
    if bad:
        rep.failures.append(f"trials {bad} not in dataset (valid: {sorted(trials)})")
    if spec.vaccine_a not in ds.vaccines:
        rep.failures.append(f"vaccine {spec.vaccine_a} not in dataset (valid: {list(ds.vaccines)})")
    if bad or rep.failures:
        return rep

    relevant = sorted(set(spec.t_ref) | set(spec.t_a))
    for cov in spec.w_delta_s:
        for t in relevant:
            collected = cov in ds.covariates and cov in ds.registry[t].covariates
            rep.covariate_availability[(cov, t)] = collected
            needed = cov in spec.w_s or t in spec.t_a
            if not collected and needed:
                rep.failures.append(f"covariate {cov!r} not collected in trial {t}")

    # registry invariants
    for t, info in ds.registry.items():
        rows = ds.trial == t
        if info.design == ALL_SAMPLED and np.any(ds.delta[rows] == 0):
            rep.failures.append(f"trial {t} is registered all-sampled but has delta=0 rows")
        for cov in ds.covariate_names:
            if cov not in info.covariates and not np.all(ds.missing(cov)[rows]):
                rep.failures.append(f"covariate {cov!r} marked uncollected in trial {t} "
                                    "but has values")
        w = ds.weight[rows]
        if info.design == ALL_SAMPLED and np.any(~np.isnan(w) & (w != 1)):
            rep.warnings.append(f"trial {t} is all-sampled but carries known weights != 1")

    # missing values inside W_S / W_Delta on units that enter a regression
    in_any = ds.in_trials(trials)
    for cov in spec.w_s:
        if cov in ds.covariates:
            m = ds.missing(cov) & in_any
            if m.any():
                rep.failures.append(f"covariate {cov!r} missing on {int(m.sum())} units")
    for cov in spec.w_delta:
        if cov in ds.covariates and cov not in spec.w_s:
            m = ds.missing(cov) & ds.in_trials(spec.t_a)
            if m.any():
                rep.failures.append(f"covariate {cov!r} missing on {int(m.sum())} units in T_a")

    is_a = (ds.arm == spec.vaccine_a) & ds.in_trials(spec.t_a)
    if not np.any(is_a & (ds.delta == 1)):
        rep.failures.append(f"no sampled units received vaccine {spec.vaccine_a} in T_a")
    if not np.any(ds.in_trials(spec.t_ref)):
        rep.failures.append("no units in the referent trials")
    if not set(spec.t_ref) & set(spec.t_a):
        rep.warnings.append("T_ref and T_a are disjoint: g_A is extrapolated to referent units")

    if spec.scale == "log10":
        s = ds.s[is_a & (ds.delta == 1)]
        if np.any(s <= 0):
            rep.failures.append("log10 scale requested but some immune responses are <= 0")

    # positivity over discrete W_S profiles seen in the referent trials
    if spec.w_s and all(c in ds.covariates for c in spec.w_s) and not rep.failures:
        cols = [np.array([str(v) for v in ds.covariates[c]], dtype=object) for c in spec.w_s]
        if all(len(set(c)) <= MAX_POSITIVITY_LEVELS for c in cols):
            profiles = list(zip(*cols))
            ref = ds.in_trials(spec.t_ref)
            counts = Counter(p for p, r in zip(profiles, ref) if r)
            treated = Counter(p for p, a in zip(profiles, ds.arm == spec.vaccine_a) if a)
            for prof in sorted(counts):
                entry = {"profile": dict(zip(spec.w_s, prof)), "n_ref": counts[prof],
                         "n_vaccine": treated.get(prof, 0)}
                rep.positivity_diagnostics.append(entry)
                if entry["n_vaccine"] == 0:
                    rep.warnings.append(f"positivity: stratum {entry['profile']} occurs in T_ref "
                                        f"but no unit received vaccine {spec.vaccine_a}")

    rep.sampling_diagnostics = _sampling_ranges(ds)
    return rep


def _sampling_ranges(ds: StackedDataset) -> dict[int, tuple[float, float]]:
    """Per-trial (min, max) sampling probability: known weights where given,
    otherwise empirical sampling fractions within (arm, Y) cells."""
    out = {}
    for t, info in ds.registry.items():
        rows = ds.trial == t
        if info.design == ALL_SAMPLED:
            out[t] = (1.0, 1.0)
            continue
        w = ds.weight[rows]
        if np.all(~np.isnan(w)):
            out[t] = (float(w.min()), float(w.max()))
            continue
        ylev = ds.y_levels()[rows]
        arm = ds.arm[rows]
        d = ds.delta[rows]
        fr = [d[(arm == a) & (ylev == yl)].mean()
              for a in np.unique(arm) for yl in np.unique(ylev)
              if np.any((arm == a) & (ylev == yl))]
        out[t] = (float(min(fr)), float(max(fr)))
    return out
