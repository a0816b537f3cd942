"""Exact evaluation of the identified functional on finite-support models.

A :class:`DiscreteDGP` describes the full joint law of
(T, W, A, S(a) for every a, Y, Delta) through conditional tables. From it we
compute, by summation over every atom,

* the counterfactual target  E[S(a) | T in T_ref], straight from the
  structural S(a) distributions, and
* the observed-data functional  E{ E[ E(S | Delta=1, A=a, T in T_a, Y, W_delta,S)
  | A=a, T in T_a, W_S ] | T in T_ref },

which coincide whenever the ignorability, positivity and missing-at-random
conditions hold.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from itertools import product
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import EstimandSpec, StackedDataset, TrialInfo, ALL_SAMPLED, TWO_PHASE

MAX_ATOMS = 1_000_000

Profile = tuple


class SupportTooLarge(MemoryError):
    pass


@dataclass(frozen=True)
class DiscreteDGP:
    """Finite-support structural model.

    ``p_w(t)`` maps covariate profiles (tuples ordered as ``covariates``) to
    probabilities; ``p_arm(t, w)`` maps arms to probabilities; ``p_s(t, a, w)``
    is the law of the potential response S(a) as ``{value: prob}``;
    ``p_y(t, a, w, s)`` is P(Y=1); ``p_delta(t, a, w, y, s)`` is P(Delta=1).
    """

    covariates: tuple[str, ...]
    p_trial: Mapping[int, float]
    p_w: Callable[[int], Mapping[Profile, float]]
    p_arm: Callable[[int, Profile], Mapping[int, float]]
    p_s: Callable[[int, int, Profile], Mapping[float, float]]
    p_y: Callable[[int, int, Profile, float], float]
    p_delta: Callable[[int, int, Profile, int, float], float]

    def atoms(self):
        """Yield (prob, t, w, a, s, y, delta) over the observed-data joint."""
        count = 0
        for t, pt in self.p_trial.items():
            if pt == 0:
                continue
            for w, pw in self.p_w(t).items():
                if pw == 0:
                    continue
                for a, pa in self.p_arm(t, w).items():
                    if pa == 0:
                        continue
                    for s, ps in self.p_s(t, a, w).items():
                        if ps == 0:
                            continue
                        py1 = self.p_y(t, a, w, s)
                        for y, py in ((1, py1), (0, 1.0 - py1)):
                            if py == 0:
                                continue
                            pd1 = self.p_delta(t, a, w, y, s)
                            for d, pd in ((1, pd1), (0, 1.0 - pd1)):
                                if pd == 0:
                                    continue
                                count += 1
                                if count > MAX_ATOMS:
                                    raise SupportTooLarge(
                                        f"support exceeds {MAX_ATOMS} atoms")
                                yield pt * pw * pa * ps * py * pd, t, w, a, s, y, d

    def sample(self, n: int, rng: np.random.Generator) -> StackedDataset:
        """Draw n i.i.d. observed-data units (S recorded only when Delta=1)."""
        atoms = list(self.atoms())
        probs = np.array([a[0] for a in atoms])
        idx = rng.choice(len(atoms), size=n, p=probs / probs.sum())
        rows = [atoms[i] for i in idx]
        trial = np.array([r[1] for r in rows])
        arm = np.array([r[3] for r in rows])
        covs = {c: np.array([float(r[2][k]) for r in rows]) for k, c in enumerate(self.covariates)}
        delta = np.array([r[6] for r in rows])
        s = np.array([r[4] for r in rows], dtype=float)
        y = np.array([r[5] for r in rows], dtype=float)
        registry = {}
        for t in self.p_trial:
            d = delta[trial == t]
            if d.size == 0:
                continue
            arms = frozenset(int(a) for w in self.p_w(t) for a, pa in self.p_arm(t, w).items()
                             if pa > 0)
            registry[t] = TrialInfo(frozenset(self.covariates), arms,
                                    ALL_SAMPLED if np.all(d == 1) else TWO_PHASE)
        return StackedDataset.from_arrays(trial, arm, covs, delta, s, y, registry=registry)


def _project(w: Profile, names: Sequence[str], keep: Sequence[str]) -> Profile:
    return tuple(w[names.index(c)] for c in keep)


def counterfactual_mean(dgp: DiscreteDGP, a: int, t_ref) -> float:
    """E[S(a) | T in T_ref] from the structural equations."""
    num = den = 0.0
    for t in t_ref:
        pt = dgp.p_trial.get(t, 0.0)
        for w, pw in dgp.p_w(t).items():
            mean_s = sum(s * ps for s, ps in dgp.p_s(t, a, w).items())
            num += pt * pw * mean_s
            den += pt * pw
    return num / den


def observed_functional(dgp: DiscreteDGP, spec: EstimandSpec) -> float:
    """Nested-expectation functional of the observed-data law."""
    names = list(dgp.covariates)
    wds = spec.w_delta_s
    a = spec.vaccine_a
    # E(S | Delta=1, A=a, T in T_a, Y, W_delta,S)
    q2_num: dict = defaultdict(float)
    q2_den: dict = defaultdict(float)
    # law of (Y, W_delta,S) given A=a, T in T_a, W_S
    inner: dict = defaultdict(float)
    ref_w: dict = defaultdict(float)
    for p, t, w, arm, s, y, d in dgp.atoms():
        ws = _project(w, names, spec.w_s)
        if t in spec.t_ref:
            ref_w[ws] += p
        if arm != a or t not in spec.t_a:
            continue
        key = (y, _project(w, names, wds))
        inner[(ws, key)] += p
        if d == 1:
            q2_num[key] += p * s
            q2_den[key] += p
    q1_num: dict = defaultdict(float)
    q1_den: dict = defaultdict(float)
    for (ws, key), p in inner.items():
        if q2_den[key] == 0:
            raise ZeroDivisionError(f"sampling positivity fails at (Y, W) = {key}")
        q1_num[ws] += p * q2_num[key] / q2_den[key]
        q1_den[ws] += p
    total = sum(ref_w.values())
    psi = 0.0
    for ws, p in ref_w.items():
        if q1_den[ws] == 0:
            raise ZeroDivisionError(f"vaccine positivity fails at W_S = {ws}")
        psi += p / total * q1_num[ws] / q1_den[ws]
    return psi


def identify_exact(dgp: DiscreteDGP, spec: EstimandSpec) -> tuple[float, float]:
    """Return (observed-data functional, counterfactual mean)."""
    return observed_functional(dgp, spec), counterfactual_mean(dgp, spec.vaccine_a, spec.t_ref)


def bernoulli_profiles(probs: Sequence[float]) -> dict[Profile, float]:
    """Independent binary covariates as a {profile: prob} table."""
    out = {}
    for w in product((0, 1), repeat=len(probs)):
        p = 1.0
        for wi, pi in zip(w, probs):
            p *= pi if wi else 1 - pi
        out[w] = p
    return out
