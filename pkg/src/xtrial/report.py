"""Plain-text renderings of stored result records.

Nothing here recomputes an estimate: every number printed is read from the
records written by the ``estimate`` and ``simulate`` commands.
"""

from __future__ import annotations

import csv
import io
import math
from typing import Iterable, Sequence

from .contrasts import ContrastResult
from .tmle import EstimateResult

KIND_LABEL = {"binary": "RR", "log10": "GM", "identity": "Mean"}
CONTRAST_LABEL = "Difference/Ratio"


def display_estimate(r: EstimateResult) -> dict:
    """Arm-level value on the reporting scale (geometric mean for log10)."""
    if r.scale == "log10":
        return {"estimate": 10.0 ** r.psi, "ci": [10.0 ** r.ci[0], 10.0 ** r.ci[1]]}
    return {"estimate": r.psi, "ci": list(r.ci)}


def estimate_record(r: EstimateResult) -> dict:
    rec = r.to_record()
    rec["display"] = display_estimate(r)
    return rec


def contrast_record(c: ContrastResult) -> dict:
    return c.to_record()


def fmt(x: float | None, digits: int = 3) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "--"
    v = round(float(x), digits)
    return f"{v + 0.0:.{digits}f}"  # + 0.0 folds -0.0


def fmt_ci(ci: Sequence[float], digits: int = 3) -> str:
    return f"({fmt(ci[0], digits)}, {fmt(ci[1], digits)})"


def fmt_p(p: float) -> str:
    return "<0.001" if p < 0.0005 else fmt(p)


def _trial_label(trials: Iterable[int]) -> str:
    return "&".join(str(t) for t in sorted(trials))


def table3_rows(results: dict, vaccine_a: int, vaccine_b: int) -> list[list[str]]:
    """Rows of the two-vaccine comparison table.

    Columns: vaccine a, vaccine b, and the contrast b versus a. Each outcome
    block lists unadjusted then TMLE rows, each followed by its interval and
    p value.
    """
    trials = {int(k): v for k, v in results["trials_evaluating"].items()}
    rows = [["Trial", _trial_label(trials[vaccine_a]), _trial_label(trials[vaccine_b]),
             CONTRAST_LABEL],
            ["Vaccine", str(vaccine_a), str(vaccine_b), "-"]]
    for block in results["outcomes"]:
        rows.append([f"Outcome: {block['label']}", "", "", ""])
        label = KIND_LABEL[block["scale"]]
        for est in ("unadjusted", "tmle"):
            arms = {r["vaccine"]: r for r in block["estimates"] if r["estimator"] == est}
            con = next(c for c in block["contrasts"] if c["estimator"] == est
                       and c["vaccine_a"] == vaccine_a and c["vaccine_b"] == vaccine_b)
            ra, rb = arms[vaccine_a]["display"], arms[vaccine_b]["display"]
            tag = "unadj" if est == "unadjusted" else "TMLE"
            rows.append([f"{label} ({tag})", fmt(ra["estimate"]), fmt(rb["estimate"]),
                         fmt(con["estimate"])])
            rows.append(["CI", fmt_ci(ra["ci"]), fmt_ci(rb["ci"]), fmt_ci(con["ci"])])
            rows.append(["p value", "--", "--", fmt_p(con["p_value"])])
    return rows


TABLE2_HEADER = ("Case", "T_ref", "Vaccine", "Truth", "Bias", "Variance", "MSE",
                 "CI coverage", "CI width")


def table2_rows(records: Sequence[dict]) -> list[list[str]]:
    out = [list(TABLE2_HEADER)]
    for r in records:
        out.append([str(r["case"]), "{" + ", ".join(str(t) for t in r["t_ref"]) + "}",
                    str(r["vaccine"])]
                   + [f"{r[k]:.4f}" for k in ("truth", "bias", "variance", "mse",
                                                "ci_coverage", "ci_width")])
    return out


def markdown(rows: list[list[str]]) -> str:
    head, *body = rows
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


def to_csv(rows: list[list[str]], comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()
