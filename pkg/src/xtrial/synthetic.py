"""Synthetic three-trial data shaped like a late-phase efficacy trial with
case-control immunogenicity sampling plus two fully sampled early-phase
trials. Used for end-to-end checks of the ``estimate`` command; the numbers
carry no scientific meaning.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .sim import replicate_rng

PLACEBO = 9


@dataclass(frozen=True)
class SyntheticTrial:
    trial: int
    n: int
    vaccine: int
    case_control: bool
    p_female: float
    region_b: float


DEFAULT_TRIALS = (
    SyntheticTrial(702, 1600, 1, True, 0.70, 0.45),
    SyntheticTrial(100, 240, 1, False, 0.45, 0.35),
    SyntheticTrial(97, 160, 2, False, 0.40, 0.55),
)


def hvtn_like_columns(seed: int = 2024, trials=DEFAULT_TRIALS) -> dict[str, np.ndarray]:
    """Columns of a stacked table with a binary response ``resp`` and a
    positive magnitude ``mag``; both are meaningful only where delta = 1."""
    rng = replicate_rng(seed, 0)
    cols = {k: [] for k in ("trial", "arm", "age", "female", "bmi", "region", "delta",
                            "resp", "mag", "y", "weight")}
    for t in trials:
        n = t.n
        age = rng.normal(27 + 3 * (t.trial == 97), 6, n).round(0)
        female = (rng.random(n) < t.p_female).astype(float)
        bmi = rng.normal(24 + 2 * female, 4, n).round(1)
        region = np.where(rng.random(n) < t.region_b, "B", "A")
        arm = np.where(rng.random(n) < 0.8, t.vaccine, PLACEBO)
        vac = arm != PLACEBO
        lin = (-0.3 + 0.8 * (t.vaccine == 2) + 0.03 * (age - 27) + 0.5 * female
               - 0.3 * (region == "B"))
        resp = (rng.random(n) < expit(lin) * vac).astype(float)
        mag = 10 ** (-1.2 + 0.25 * (t.vaccine == 2) + 0.01 * (age - 27) + 0.15 * female
                     + 0.1 * resp + rng.normal(0, 0.3, n))
        if t.case_control:
            y = (rng.random(n) < expit(-3.0 - 0.6 * resp)).astype(float)
            prob = np.where(y == 1, 1.0, np.where(vac, 0.15, 0.05))
            delta = (rng.random(n) < prob).astype(int)
            weight = prob
        else:
            y = np.full(n, np.nan)
            delta = np.ones(n, dtype=int)
            weight = np.full(n, np.nan)
        for k, v in (("trial", np.full(n, t.trial)), ("arm", arm), ("age", age),
                     ("female", female), ("bmi", bmi), ("region", region), ("delta", delta),
                     ("resp", resp), ("mag", mag), ("y", y), ("weight", weight)):
            cols[k].append(v)
    return {k: np.concatenate(v) for k, v in cols.items()}


def write_hvtn_like_csv(path, seed: int = 2024) -> None:
    """Write the synthetic data with both response columns."""
    c = hvtn_like_columns(seed)
    names = ["trial", "arm", "age", "female", "bmi", "region", "delta", "resp", "mag",
             "y", "weight"]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(len(c["trial"])):
            row = []
            for k in names:
                v = c[k][i]
                if k in ("resp", "mag") and c["delta"][i] == 0:
                    row.append("")
                elif isinstance(v, str):
                    row.append(v)
                elif isinstance(v, (float, np.floating)) and np.isnan(v):
                    row.append("")
                elif k in ("trial", "arm", "delta", "female", "y", "resp"):
                    row.append(str(int(v)))
                else:
                    row.append(repr(float(v)))
            w.writerow(row)
