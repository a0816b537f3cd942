"""Simulated two-trial immunogenicity studies and Monte Carlo summaries.

Data-generating process, per trial t (``n`` per arm, or in total when the
scenario sets ``n_per_arm=False``):

    W1 ~ Bernoulli(p_w1[t]),  W2 ~ Bernoulli(p_w2[t])
    A  = active vaccine of t or control, 1:1
    S  ~ Normal(W1 - W2 + effect[t] * active, sd)
    Y  ~ Bernoulli(expit(-2 + active + W1/2 - S/2))
    Delta ~ Bernoulli(P[y, active])

With ``response_scale="log10"`` the recorded response is 10**S, so the
latent S is the log10 magnitude.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .data import ALL_SAMPLED, TWO_PHASE, EstimandSpec, StackedDataset, TrialInfo
from .identification import DiscreteDGP, bernoulli_profiles
from .contrasts import contrast_difference
from .nuisance import EstimationError
from .tmle import run_tmle

PRESETS = ("scenario1", "scenario2", "scenario3")
MAX_FAILED_FRACTION = 0.05


@dataclass(frozen=True)
class TrialDesign:
    """One simulated trial. ``n`` is the size of each arm when the scenario
    has ``n_per_arm`` set, otherwise the trial total. Sampling probabilities
    are indexed by Y: ``sampling_active[y]`` = P(Delta=1 | Y=y, active arm)."""

    trial: int
    n: int
    p_w1: float
    p_w2: float
    active_vaccine: int
    sampling_active: tuple[float, float] = (1.0, 1.0)
    sampling_control: tuple[float, float] = (1.0, 1.0)
    effect: float = 2.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"trial {self.trial}: n must be >= 1")
        probs = [self.p_w1, self.p_w2, *self.sampling_active, *self.sampling_control]
        if not all(0 <= p <= 1 for p in probs):
            raise ValueError(f"trial {self.trial}: probabilities must lie in [0, 1]")

    @property
    def all_sampled(self) -> bool:
        return all(p == 1 for p in (*self.sampling_active, *self.sampling_control))

    def sampling_table(self) -> np.ndarray:
        """P(Delta=1) indexed [y, active]."""
        return np.array([[self.sampling_control[0], self.sampling_active[0]],
                         [self.sampling_control[1], self.sampling_active[1]]])


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    case: int
    trials: tuple[TrialDesign, ...]
    estimands: tuple[tuple[frozenset, int], ...] = ()
    control: int = 3
    s_sd: float = 1.0
    response_scale: str = "identity"
    replicates: int = 1000
    base_seed: int = 1
    n_per_arm: bool = True

    def trial_size(self, td: TrialDesign) -> int:
        return 2 * td.n if self.n_per_arm else td.n

    @property
    def n(self) -> int:
        return sum(self.trial_size(t) for t in self.trials)

    def design_of(self, vaccine: int) -> TrialDesign:
        for t in self.trials:
            if t.active_vaccine == vaccine:
                return t
        raise ValueError(f"{vaccine} is not an active vaccine of scenario {self.name!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["trials"] = [asdict(t) for t in self.trials]
        d["estimands"] = [{"t_ref": sorted(r), "vaccine": a} for r, a in self.estimands]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        trials = []
        for t in d.pop("trials"):
            t = dict(t)
            for k in ("sampling_active", "sampling_control"):
                if k in t:
                    t[k] = tuple(float(p) for p in t[k])
            trials.append(TrialDesign(**t))
        ests = tuple((frozenset(e["t_ref"]), int(e["vaccine"])) for e in d.pop("estimands", ()))
        return cls(trials=tuple(trials), estimands=ests, **d)


def load_preset(name: str) -> ScenarioSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("xtrial").joinpath(f"presets/{name}.json").read_text("utf-8")
    return ScenarioSpec.from_json(json.loads(text))


def load_scenario(path) -> ScenarioSpec:
    return ScenarioSpec.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def replicate_rng(base_seed: int, replicate: int) -> np.random.Generator:
    """Independent counter-based (Philox) stream per replicate."""
    if replicate < 0:
        raise ValueError("replicate index must be >= 0")
    ss = np.random.SeedSequence(base_seed, spawn_key=(replicate,))
    return np.random.Generator(np.random.Philox(ss))


def generate(spec: ScenarioSpec, replicate: int) -> StackedDataset:
    rng = replicate_rng(spec.base_seed, replicate)
    parts = []
    registry = {}
    for td in spec.trials:
        n = spec.trial_size(td)
        w1 = (rng.random(n) < td.p_w1).astype(float)
        w2 = (rng.random(n) < td.p_w2).astype(float)
        active = rng.random(n) < 0.5
        s = rng.normal(w1 - w2 + td.effect * active, spec.s_sd)
        y = (rng.random(n) < expit(-2.0 + active + w1 / 2 - s / 2)).astype(int)
        p_delta = td.sampling_table()[y, active.astype(int)]
        delta = (rng.random(n) < p_delta).astype(int)
        weight = np.full(n, np.nan) if td.all_sampled else p_delta
        arm = np.where(active, td.active_vaccine, spec.control)
        recorded = 10.0 ** s if spec.response_scale == "log10" else s
        parts.append((np.full(n, td.trial), arm, w1, w2, delta, recorded, y.astype(float), weight))
        registry[td.trial] = TrialInfo(frozenset({"W1", "W2"}),
                                       frozenset({td.active_vaccine, spec.control}),
                                       ALL_SAMPLED if td.all_sampled else TWO_PHASE)
    cols = [np.concatenate(c) for c in zip(*parts)]
    trial, arm, w1, w2, delta, s, y, weight = cols
    return StackedDataset(trial, arm, {"W1": w1, "W2": w2}, delta, s, y, weight, registry)


def analytic_truth(spec: ScenarioSpec, t_ref, a: int) -> float:
    """Standardized mean of the (latent) response under vaccine a."""
    if a == spec.control:
        raise ValueError("truth is defined for active vaccines only")
    effect = spec.design_of(a).effect
    ref = [t for t in spec.trials if t.trial in set(t_ref)]
    if not ref:
        raise ValueError(f"referent trials {sorted(t_ref)} not in scenario")
    total = sum(spec.trial_size(t) for t in ref)
    return sum(spec.trial_size(t) / total * (t.p_w1 - t.p_w2 + effect) for t in ref)


def to_discrete_dgp(spec: ScenarioSpec) -> DiscreteDGP:
    """The scenario with S replaced by its conditional mean (finite support)."""
    by_trial = {t.trial: t for t in spec.trials}
    total = spec.n
    effects = {t.active_vaccine: t.effect for t in spec.trials}

    def p_arm(t, w):
        return {by_trial[t].active_vaccine: 0.5, spec.control: 0.5}

    def p_s(t, a, w):
        return {w[0] - w[1] + effects.get(a, 0.0): 1.0}

    def p_y(t, a, w, s):
        return float(expit(-2.0 + (a != spec.control) + w[0] / 2 - s / 2))

    def p_delta(t, a, w, y, s):
        return float(by_trial[t].sampling_table()[y, int(a != spec.control)])

    return DiscreteDGP(
        ("W1", "W2"),
        {t.trial: spec.trial_size(t) / total for t in spec.trials},
        lambda t: bernoulli_profiles([by_trial[t].p_w1, by_trial[t].p_w2]),
        p_arm, p_s, p_y, p_delta)


def scenario_estimand(spec: ScenarioSpec, ds: StackedDataset, t_ref, a: int,
                      gdelta: str = "known") -> EstimandSpec:
    scale = "log10" if spec.response_scale == "log10" else "identity"
    return EstimandSpec.for_dataset(ds, a, t_ref, w_s=("W1", "W2"), scale=scale, gdelta=gdelta)


# ---------------------------------------------------------------- Monte Carlo


@dataclass
class MetricsRow:
    case: int
    t_ref: frozenset
    vaccine: int
    truth: float
    bias: float
    variance: float
    mse: float
    ci_coverage: float
    ci_width: float
    n_ok: int
    n_failed: int
    variance_defined: bool = True


@dataclass
class MetricsTable:
    scenario: str
    rows: list[MetricsRow]
    draws: list[np.ndarray] = field(default_factory=list)  # per row: (R, 4) psi, se, lo, hi
    eif_ratios: list[float] = field(default_factory=list)
    seed: int = 0
    replicates: int = 0

    HEADER = ("Case", "T_ref", "Vaccine", "Truth", "Bias", "Variance", "MSE",
              "CI coverage", "CI width")

    def records(self) -> list[dict]:
        out = []
        for r in self.rows:
            out.append({"case": r.case, "t_ref": sorted(r.t_ref), "vaccine": r.vaccine,
                        "truth": r.truth, "bias": r.bias, "variance": r.variance,
                        "mse": r.mse, "ci_coverage": r.ci_coverage, "ci_width": r.ci_width,
                        "n_ok": r.n_ok, "n_failed": r.n_failed,
                        "variance_defined": r.variance_defined})
        return out

    def csv_lines(self) -> list[str]:
        lines = [",".join(self.HEADER)]
        for r in self.rows:
            ref = "{" + ", ".join(str(t) for t in sorted(r.t_ref)) + "}"
            vals = [r.truth, r.bias, r.variance, r.mse, r.ci_coverage, r.ci_width]
            lines.append(",".join([str(r.case), f'"{ref}"', str(r.vaccine),
                                   *(f"{v:.4f}" for v in vals)]))
        return lines


def summarize(draws: np.ndarray, truth: float) -> dict:
    """Table-2 metrics from an (R, 4) array of (psi, se, lo, hi)."""
    psi = draws[:, 0]
    r = len(psi)
    bias = float(psi.mean() - truth)
    variance = float(psi.var(ddof=1)) if r > 1 else 0.0
    return {
        "bias": bias,
        "variance": variance,
        "variance_defined": r > 1,
        "mse": float(np.mean((psi - truth) ** 2)),
        "ci_coverage": float(np.mean((draws[:, 2] <= truth) & (truth <= draws[:, 3]))),
        "ci_width": float(np.mean(draws[:, 3] - draws[:, 2])),
    }


def _one_replicate(args) -> list:
    spec, estimands, rep, gdelta = args
    ds = generate(spec, rep)
    out = []
    for t_ref, a in estimands:
        est = scenario_estimand(spec, ds, t_ref, a, gdelta)
        try:
            r = run_tmle(ds, est)
        except EstimationError:
            out.append(None)
            continue
        out.append((r.psi, r.se, r.ci[0], r.ci[1], r.diagnostics["mean_eif_over_sd"]))
    return out


def worker_count() -> int:
    cap = os.environ.get("XTRIAL_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def run_monte_carlo(spec: ScenarioSpec, estimands: Sequence[tuple] | None = None,
                    replicates: int | None = None, gdelta: str = "known",
                    workers: int | None = None) -> MetricsTable:
    """Generate, estimate and summarize ``replicates`` datasets.

    Replicates are independent streams; results are reduced in replicate
    order, so serial and parallel runs give identical tables.
    """
    estimands = list(estimands or spec.estimands)
    replicates = spec.replicates if replicates is None else replicates
    if replicates < 1:
        raise ValueError("need at least one replicate")
    workers = worker_count() if workers is None else workers
    jobs = [(spec, estimands, rep, gdelta) for rep in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_replicate, jobs, chunksize=max(1, replicates // (4 * workers))))
    else:
        results = [_one_replicate(j) for j in jobs]

    rows, draws, ratios = [], [], []
    for k, (t_ref, a) in enumerate(estimands):
        ok = [res[k] for res in results if res[k] is not None]
        failed = replicates - len(ok)
        if failed > MAX_FAILED_FRACTION * replicates:
            raise EstimationError(f"{failed}/{replicates} replicates failed for "
                                  f"T_ref={sorted(t_ref)}, vaccine {a}")
        arr = np.array([o[:4] for o in ok]).reshape(-1, 4)
        ratios.extend(o[4] for o in ok)
        truth = analytic_truth(spec, t_ref, a)
        m = summarize(arr, truth)
        rows.append(MetricsRow(spec.case, frozenset(t_ref), a, truth, m["bias"], m["variance"],
                               m["mse"], m["ci_coverage"], m["ci_width"], len(ok), failed,
                               m["variance_defined"]))
        draws.append(arr)
    return MetricsTable(spec.name, rows, draws, ratios, spec.base_seed, replicates)


def _one_contrast(args):
    spec, t_ref, a, b, rep, gdelta = args
    ds = generate(spec, rep)
    try:
        ra = run_tmle(ds, scenario_estimand(spec, ds, t_ref, a, gdelta))
        rb = run_tmle(ds, scenario_estimand(spec, ds, t_ref, b, gdelta))
    except EstimationError:
        return None
    c = contrast_difference(ra, rb)
    return c.estimate, c.se, c.p_value


def contrast_monte_carlo(spec: ScenarioSpec, t_ref, a: int, b: int,
                         replicates: int | None = None, gdelta: str = "known",
                         workers: int | None = None) -> np.ndarray:
    """(R, 3) array of (difference, se, p value) for psi_b - psi_a; failed
    replicates are dropped."""
    replicates = spec.replicates if replicates is None else replicates
    workers = worker_count() if workers is None else workers
    jobs = [(spec, frozenset(t_ref), a, b, rep, gdelta) for rep in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_one_contrast, jobs, chunksize=max(1, replicates // (4 * workers))))
    else:
        res = [_one_contrast(j) for j in jobs]
    return np.array([r for r in res if r is not None]).reshape(-1, 3)


def expected_sampling_fraction(td: TrialDesign, s_sd: float = 1.0, n_grid: int = 4001) -> float:
    """P(Delta=1) in one trial, integrating Y over the response distribution."""
    total = 0.0
    grid = np.linspace(-10, 10, n_grid)
    dens = np.exp(-grid ** 2 / 2) / math.sqrt(2 * math.pi)
    dx = grid[1] - grid[0]
    for w1, p1 in ((1, td.p_w1), (0, 1 - td.p_w1)):
        for w2, p2 in ((1, td.p_w2), (0, 1 - td.p_w2)):
            for act in (0, 1):
                s = w1 - w2 + td.effect * act + s_sd * grid
                py1 = float(np.sum(expit(-2 + act + w1 / 2 - s / 2) * dens) * dx)
                samp = td.sampling_table()
                pd = py1 * samp[1, act] + (1 - py1) * samp[0, act]
                total += p1 * p2 * 0.5 * pd
    return total
