"""Sequential-regression TMLE of a standardized mean immune response.

The pipeline: g_T, g_A and g_Delta nuisances; a regression of S (mapped
into (0, 1)) on (Y, W_delta,S) among sampled vaccine-a recipients, targeted
with a one-parameter logistic fluctuation; a second regression of the
targeted predictions on W_S among all vaccine-a recipients, targeted again;
then the plug-in mean over the referent trials. Inference comes from the
per-unit efficient influence function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import expit, logit

from .data import DEFAULT_TRUNCATION, Encoder, EstimandSpec, StackedDataset
from .glm import FluctuationFit, GlmFit, fit_fluctuation, fit_linear, fit_logistic, predict
from .nuisance import EstimationError, FittedNuisances, evaluate, fit_nuisances, resolve_sampling

Z95 = 1.959963984540054
Q_CLIP = 1e-6


class OutcomeDomainError(ValueError):
    pass


@dataclass(frozen=True)
class OutcomeTransform:
    """Maps S (after an optional log10) affinely onto (0, 1)."""

    kind: Literal["identity", "affine-to-unit", "log10-then-affine"]
    a_min: float
    a_max: float

    def __post_init__(self):
        if not self.a_max > self.a_min:
            raise ValueError("transform needs a_max > a_min")

    @property
    def slope(self) -> float:
        return self.a_max - self.a_min

    def analysis_scale(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.log10(s) if self.kind == "log10-then-affine" else s

    def forward(self, s: np.ndarray) -> np.ndarray:
        return (self.analysis_scale(s) - self.a_min) / self.slope

    def inverse(self, u):
        """Back to the analysis scale (log10 units for the log kind)."""
        return self.a_min + self.slope * u


def fit_transform(s: np.ndarray, scale: str, margin: float | None = 0.1) -> OutcomeTransform:
    s = np.asarray(s, dtype=float)
    if scale == "binary":
        return OutcomeTransform("affine-to-unit", -0.05, 1.05)
    if scale == "log10":
        bad = np.flatnonzero(~(s > 0))
        if bad.size:
            raise OutcomeDomainError(
                f"log10 scale needs positive responses; offending rows {bad[:10].tolist()}")
        v = np.log10(s)
        kind = "log10-then-affine"
    else:
        v = s
        kind = "affine-to-unit"
    lo, hi = float(v.min()), float(v.max())
    if margin is None:
        if kind == "affine-to-unit" and lo > 0 and hi < 1:
            return OutcomeTransform("identity", 0.0, 1.0)
        margin = 0.0
    if not hi > lo:
        raise OutcomeDomainError("immune responses are constant; the range is degenerate")
    pad = margin * (hi - lo)
    return OutcomeTransform(kind, lo - pad, hi + pad)


def scale_outcome(s_values: np.ndarray, spec: EstimandSpec
                  ) -> tuple[np.ndarray, OutcomeTransform]:
    tr = fit_transform(s_values, spec.scale, spec.margin)
    return tr.forward(s_values), tr


@dataclass
class SequentialRegressions:
    """Outcome regressions and their targeted predictions (unit scale).

    Prediction arrays have one entry per unit of the dataset; q2 arrays are
    NaN outside vaccine-a recipients in T_a.
    """

    q2: GlmFit
    q2_encoder: Encoder
    q1: GlmFit
    q1_encoder: Encoder
    q2_init: np.ndarray
    q2_star: np.ndarray
    q1_init: np.ndarray
    q1_star: np.ndarray
    fluct2: FluctuationFit
    fluct1: FluctuationFit


@dataclass
class EstimateResult:
    psi: float
    psi_unit_scale: float
    se: float
    ci: tuple[float, float]
    eif: np.ndarray
    epsilons: tuple[float, float]
    transform: OutcomeTransform | None
    scale: str
    vaccine: int
    t_ref: frozenset[int]
    estimator: Literal["tmle", "unadjusted"] = "tmle"
    ci_scale: Literal["identity", "logit"] = "identity"
    diagnostics: dict = field(default_factory=dict)
    regressions: SequentialRegressions | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.eif)

    def to_record(self) -> dict:
        rec = {
            "estimator": self.estimator, "vaccine": self.vaccine,
            "t_ref": sorted(self.t_ref), "scale": self.scale, "psi": self.psi,
            "psi_unit_scale": self.psi_unit_scale, "se": self.se, "ci": list(self.ci),
            "ci_scale": self.ci_scale, "epsilons": list(self.epsilons), "n": self.n,
            "mean_eif": float(np.mean(self.eif)),
            "diagnostics": self.diagnostics,
        }
        if self.transform is not None:
            rec["transform"] = {"kind": self.transform.kind, "a_min": self.transform.a_min,
                                "a_max": self.transform.a_max}
        return rec


def se_from_eif(eif: np.ndarray) -> float:
    n = len(eif)
    return float(np.std(eif, ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def wald_ci(psi: float, se: float, scale: str) -> tuple[tuple[float, float], str]:
    """95% interval; response rates get a logit-scale interval when the
    estimate lies strictly inside (0, 1)."""
    if scale == "binary" and 0 < psi < 1:
        half = Z95 * se / (psi * (1 - psi))
        lp = math.log(psi / (1 - psi))
        return (float(expit(lp - half)), float(expit(lp + half))), "logit"
    return (psi - Z95 * se, psi + Z95 * se), "identity"


def _clip_logit(q: np.ndarray) -> np.ndarray:
    return logit(np.clip(q, Q_CLIP, 1 - Q_CLIP))


def _outcome_fit(family: str, x, y) -> GlmFit:
    return fit_logistic(x, y) if family == "logistic" else fit_linear(x, y)


def compute_eif(ds: StackedDataset, spec: EstimandSpec, g: dict[str, np.ndarray],
                g_t_marginal: float, sr: SequentialRegressions, psi: float,
                s_unit: np.ndarray) -> np.ndarray:
    """Per-unit efficient influence function on the unit scale.

    ``g`` holds per-unit ``g_t``, ``g_a`` and ``g_delta`` as returned by
    :func:`xtrial.nuisance.evaluate`.
    """
    is_a = (ds.arm == spec.vaccine_a) & ds.in_trials(spec.t_a)
    sampled = is_a & (ds.delta == 1)
    ref = ds.in_trials(spec.t_ref)
    ratio = g["g_t"] / (g["g_a"] * g_t_marginal)
    t1 = np.zeros(ds.n)
    t2 = np.zeros(ds.n)
    t1[sampled] = ratio[sampled] / g["g_delta"][sampled] * (s_unit[sampled] - sr.q2_star[sampled])
    t2[is_a] = ratio[is_a] * (sr.q2_star[is_a] - sr.q1_star[is_a])
    t3 = np.where(ref, (sr.q1_star - psi) / g_t_marginal, 0.0)
    return t1 + t2 + t3


def eif_full_data(ds: StackedDataset, spec: EstimandSpec, g: dict[str, np.ndarray],
                  g_t_marginal: float, q_x: np.ndarray, psi: float,
                  s_unit: np.ndarray) -> np.ndarray:
    """Influence function when S is measured on everyone (no sampling layer)."""
    is_a = (ds.arm == spec.vaccine_a) & ds.in_trials(spec.t_a)
    ref = ds.in_trials(spec.t_ref)
    out = np.zeros(ds.n)
    out[is_a] = g["g_t"][is_a] / (g["g_a"][is_a] * g_t_marginal) * (s_unit[is_a] - q_x[is_a])
    out[ref] += (q_x[ref] - psi) / g_t_marginal
    return out


def _prepare(ds: StackedDataset, spec: EstimandSpec):
    if spec.vaccine_a not in ds.vaccines:
        raise ValueError(f"vaccine {spec.vaccine_a} not in dataset (valid: {list(ds.vaccines)})")
    in_ta = ds.in_trials(spec.t_a)
    is_a = (ds.arm == spec.vaccine_a) & in_ta
    sampled = is_a & (ds.delta == 1)
    if not sampled.any():
        raise EstimationError(f"no sampled units with vaccine {spec.vaccine_a} in T_a")
    if not ds.in_trials(spec.t_ref).any():
        raise ValueError("no units in the referent trials")
    pool = in_ta & (ds.delta == 1)
    _, transform = scale_outcome(ds.s[pool], spec)
    s_unit = np.full(ds.n, np.nan)
    s_unit[pool] = transform.forward(ds.s[pool])
    family = "logistic" if spec.scale == "binary" else "linear"
    return is_a, sampled, transform, s_unit, family


def _finish(ds, spec, transform, psi_unit, eif_unit, eps, diagnostics) -> EstimateResult:
    psi = float(transform.inverse(psi_unit))
    eif = eif_unit * transform.slope
    se = se_from_eif(eif)
    ci, ci_scale = wald_ci(psi, se, spec.scale)
    sd = float(np.std(eif_unit, ddof=1)) if len(eif_unit) > 1 else 0.0
    diagnostics["mean_eif"] = float(np.mean(eif))
    diagnostics["mean_eif_over_sd"] = abs(float(np.mean(eif_unit))) / sd if sd > 0 else 0.0
    return EstimateResult(psi, float(psi_unit), se, ci, eif, eps, transform, spec.scale,
                          spec.vaccine_a, spec.t_ref, "tmle", ci_scale, diagnostics)


def run_tmle(ds: StackedDataset, spec: EstimandSpec,
             nuisances: FittedNuisances | None = None) -> EstimateResult:
    """TMLE of the standardized mean of S under vaccine ``spec.vaccine_a``
    in the referent trials. ``nuisances`` may be supplied pre-fitted."""
    is_a, sampled, transform, s_unit, family = _prepare(ds, spec)
    fn = nuisances if nuisances is not None else fit_nuisances(ds, spec)
    g = evaluate(fn, ds, spec)
    gm = fn.g_t_marginal
    h1 = g["g_t"] / (g["g_a"] * gm)
    h2 = h1 / g["g_delta"]

    # outcome regression given sampling covariates, then its fluctuation
    enc2 = Encoder.fit(ds, ["Y", *spec.w_delta_s], is_a)
    x2 = enc2.design(ds, is_a).values
    rows_a = np.flatnonzero(is_a)
    samp_in_a = sampled[rows_a]
    q2 = _outcome_fit(family, x2[samp_in_a], s_unit[sampled])
    q2_init = np.full(ds.n, np.nan)
    q2_init[rows_a] = predict(q2, x2)
    off2 = _clip_logit(q2_init[rows_a])
    fl2 = fit_fluctuation(off2[samp_in_a], h2[sampled], s_unit[sampled])
    q2_star = np.full(ds.n, np.nan)
    q2_star[rows_a] = expit(off2 + fl2.epsilon * h2[rows_a])

    # regression of the targeted predictions on W_S, then its fluctuation
    enc1 = Encoder.fit(ds, spec.w_s, is_a)
    x1_all = enc1.design(ds).values
    q1 = _outcome_fit(family, x1_all[rows_a], q2_star[rows_a])
    q1_init = predict(q1, x1_all)
    off1 = _clip_logit(q1_init)
    fl1 = fit_fluctuation(off1[rows_a], h1[rows_a], q2_star[rows_a])
    q1_star = expit(off1 + fl1.epsilon * h1)

    diagnostics = {
        "fluctuation_converged": [fl2.converged, fl1.converged],
        "fluctuation_score": [fl2.score, fl1.score],
        "g_t_converged": fn.g_t_model.fit is None or fn.g_t_model.fit.converged,
        "g_a_converged": fn.g_a_model.fit is None or fn.g_a_model.fit.converged,
        "g_t_marginal": gm,
        "n_vaccine": int(is_a.sum()), "n_sampled": int(sampled.sum()),
    }
    if not (fl2.converged and fl1.converged):
        raise EstimationError("fluctuation did not converge", diagnostics)

    ref = ds.in_trials(spec.t_ref)
    psi_unit = float(np.mean(q1_star[ref]))
    sr = SequentialRegressions(q2, enc2, q1, enc1, q2_init, q2_star, q1_init, q1_star, fl2, fl1)
    eif_unit = compute_eif(ds, spec, g, gm, sr, psi_unit, s_unit)
    res = _finish(ds, spec, transform, psi_unit, eif_unit, (fl2.epsilon, fl1.epsilon),
                  diagnostics)
    res.regressions = sr
    return res


def run_tmle_full_data(ds: StackedDataset, spec: EstimandSpec,
                       nuisances: FittedNuisances | None = None) -> EstimateResult:
    """TMLE for data where S is measured on every unit: one regression of S
    on W_S among vaccine-a recipients, one fluctuation, plug-in."""
    if np.any(ds.delta[ds.in_trials(spec.t_a)] == 0):
        raise ValueError("full-data TMLE needs S measured on every unit in T_a")
    is_a, _, transform, s_unit, family = _prepare(ds, spec)
    fn = nuisances if nuisances is not None else fit_nuisances(ds, spec)
    g = evaluate(fn, ds, spec)
    gm = fn.g_t_marginal
    h = g["g_t"] / (g["g_a"] * gm)
    enc = Encoder.fit(ds, spec.w_s, is_a)
    x = enc.design(ds).values
    q = _outcome_fit(family, x[is_a], s_unit[is_a])
    off = _clip_logit(predict(q, x))
    fl = fit_fluctuation(off[is_a], h[is_a], s_unit[is_a])
    q_star = expit(off + fl.epsilon * h)
    if not fl.converged:
        raise EstimationError("fluctuation did not converge", {"score": fl.score})
    psi_unit = float(np.mean(q_star[ds.in_trials(spec.t_ref)]))
    eif_unit = eif_full_data(ds, spec, g, gm, q_star, psi_unit, s_unit)
    return _finish(ds, spec, transform, psi_unit, eif_unit, (fl.epsilon, 0.0),
                   {"fluctuation_converged": [fl.converged]})


def estimate_unadjusted(ds: StackedDataset, arm: int, trials, scale: str = "identity",
                        gdelta: str = "known",
                        prob_truncation: tuple[float, float] = DEFAULT_TRUNCATION
                        ) -> EstimateResult:
    """Sampling-weighted (Hajek) mean of S among ``arm`` recipients in
    ``trials``; reduces to the arm average when everyone was sampled."""
    trials = frozenset(trials)
    spec = EstimandSpec(arm, trials, trials, scale=scale, gdelta=gdelta,
                        prob_truncation=prob_truncation)
    pop = (ds.arm == arm) & ds.in_trials(trials)
    sampled = pop & (ds.delta == 1)
    if not sampled.any():
        raise EstimationError(f"no sampled units with vaccine {arm} in trials {sorted(trials)}")
    g_delta = resolve_sampling(ds, spec)
    s = ds.s[sampled]
    if scale == "log10":
        if np.any(s <= 0):
            raise OutcomeDomainError("log10 scale needs positive responses")
        s = np.log10(s)
    ipw = np.zeros(ds.n)
    ipw[sampled] = 1.0 / g_delta[sampled]
    mu = float(np.sum(ipw[sampled] * s) / ipw.sum())
    eif = np.zeros(ds.n)
    eif[sampled] = ipw[sampled] * (s - mu) / ipw.mean()
    se = se_from_eif(eif)
    ci = (mu - Z95 * se, mu + Z95 * se)
    return EstimateResult(mu, float("nan"), se, ci, eif, (0.0, 0.0), None, scale, arm, trials,
                          "unadjusted", "identity",
                          {"n_population": int(pop.sum()), "n_sampled": int(sampled.sum()),
                           "mean_eif": float(np.mean(eif))})
