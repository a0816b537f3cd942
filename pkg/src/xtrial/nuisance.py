"""Trial-membership, vaccine-assignment and sampling probabilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ALL_SAMPLED, Encoder, EstimandSpec, StackedDataset
from .glm import GlmFit, fit_logistic, predict


class EstimationError(RuntimeError):
    """A fit could not be carried out; ``diagnostics`` says why."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def truncate(p: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    return np.clip(p, bounds[0], bounds[1])


@dataclass(frozen=True)
class BinaryModel:
    """Logistic model on an encoded design, or a constant probability."""

    encoder: Encoder
    fit: GlmFit | None = None
    constant: float | None = None

    def predict(self, ds: StackedDataset) -> np.ndarray:
        if self.fit is None:
            return np.full(ds.n, float(self.constant))
        return predict(self.fit, self.encoder.design(ds).values)


@dataclass(frozen=True)
class FittedNuisances:
    g_t_model: BinaryModel
    g_t_marginal: float
    g_a_model: BinaryModel
    g_delta: np.ndarray
    truncation_bounds: tuple[float, float]


def fit_trial_membership(ds: StackedDataset, spec: EstimandSpec) -> tuple[BinaryModel, float]:
    """P(T in T_ref | W_S) pooled over every trial, plus the empirical
    marginal fraction of referent units."""
    in_ref = ds.in_trials(spec.t_ref)
    marginal = float(in_ref.mean())
    enc = Encoder.fit(ds, spec.w_s)
    if marginal == 1.0:
        return BinaryModel(enc, constant=1.0), 1.0
    if marginal == 0.0:
        raise EstimationError("no units in the referent trials")
    fit = fit_logistic(enc.design(ds).values, in_ref.astype(float))
    return BinaryModel(enc, fit), marginal


def fit_treatment(ds: StackedDataset, spec: EstimandSpec) -> BinaryModel:
    """P(A = a | W_S) pooled over all trials, including trials where the
    vaccine was never offered."""
    is_a = ds.arm == spec.vaccine_a
    if not is_a.any():
        raise EstimationError(f"no units received vaccine {spec.vaccine_a}")
    enc = Encoder.fit(ds, spec.w_s)
    if is_a.all():
        return BinaryModel(enc, constant=1.0)
    return BinaryModel(enc, fit_logistic(enc.design(ds).values, is_a.astype(float)))


def resolve_sampling(ds: StackedDataset, spec: EstimandSpec) -> np.ndarray:
    """Per-unit P(Delta = 1 | T, A, Y, W_delta,S).

    All-sampled trials give exactly 1. Two-phase trials use the known design
    weights (``gdelta="known"``) where present; anything else is estimated
    by a per-trial logistic regression of Delta on (A, Y, W_delta,S).
    Estimated and known probabilities are floored at the lower truncation
    bound; no upper bound is applied to sampling probabilities.
    """
    lo = spec.prob_truncation[0]
    g = np.ones(ds.n)
    features = ["A", "Y", *spec.w_delta_s]
    for t, info in ds.registry.items():
        rows = ds.trial == t
        if info.design == ALL_SAMPLED:
            continue
        w = ds.weight[rows]
        need = np.ones(rows.sum(), dtype=bool) if spec.gdelta == "estimate" else np.isnan(w)
        vals = np.where(np.isnan(w), np.nan, w)
        if need.any():
            d = ds.delta[rows]
            if d.min() == d.max():
                raise EstimationError(
                    f"trial {t}: sampling probabilities unknown and Delta has one class")
            sub = ds.take(np.flatnonzero(rows))
            enc = Encoder.fit(sub, features)
            fit = fit_logistic(enc.design(sub).values, d.astype(float))
            est = predict(fit, enc.design(sub).values)
            vals = np.where(need, est, vals)
        g[rows] = np.maximum(vals, lo)
    return g


def fit_nuisances(ds: StackedDataset, spec: EstimandSpec) -> FittedNuisances:
    g_t, marginal = fit_trial_membership(ds, spec)
    return FittedNuisances(g_t, marginal, fit_treatment(ds, spec),
                           resolve_sampling(ds, spec), spec.prob_truncation)


def evaluate(fn: FittedNuisances, ds: StackedDataset, spec: EstimandSpec | None = None
             ) -> dict[str, np.ndarray]:
    """Per-unit g_T(T_ref | W), g_A(a | W) and g_Delta, truncated.

    A constant g_T (referent = every trial) is left at exactly 1."""
    b = fn.truncation_bounds
    g_t = fn.g_t_model.predict(ds)
    if fn.g_t_model.fit is not None:
        g_t = truncate(g_t, b)
    return {
        "g_t": g_t,
        "g_a": truncate(fn.g_a_model.predict(ds), b),
        "g_delta": fn.g_delta.copy(),
    }
