"""Differences and geometric-mean ratios between two standardized estimates.

Both estimates must come from the same stacked dataset, so their influence
function vectors are aligned unit by unit; the contrast's influence function
is the difference of the two and no independence assumption is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .tmle import Z95, EstimateResult, se_from_eif


class ContrastError(ValueError):
    pass


@dataclass(frozen=True)
class ContrastResult:
    """Contrast of ``b`` against ``a``.

    ``se``, ``z`` and the interval are computed on ``ci_scale``: the raw
    difference (``identity``), Fisher's z of a response-rate difference
    (``atanh``) or the log10 ratio (``log10``). ``estimate`` and ``ci`` are
    always reported on the natural scale.
    """

    kind: Literal["difference", "log-ratio"]
    estimate: float
    linear_estimate: float
    se: float
    ci: tuple[float, float]
    z: float
    p_value: float
    components: tuple[EstimateResult, EstimateResult]
    ci_scale: str = "identity"
    degenerate: bool = False

    def to_record(self) -> dict:
        a, b = self.components
        return {
            "kind": self.kind, "vaccine_a": a.vaccine, "vaccine_b": b.vaccine,
            "estimator": b.estimator, "estimate": self.estimate,
            "linear_estimate": self.linear_estimate, "se": self.se, "ci": list(self.ci),
            "ci_scale": self.ci_scale, "z": self.z, "p_value": self.p_value,
            "degenerate": self.degenerate,
        }


def normal_sf(x: float) -> float:
    """Upper tail 1 - Phi(x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def wald_test(estimate: float, se: float, null: float = 0.0) -> tuple[float, float, bool]:
    """Two-sided Wald test; returns ``(z, p, degenerate)``.

    A zero standard error gives z = nan and p = 1 when the estimate sits on
    the null, otherwise z = +-inf and p = 0; both cases set ``degenerate``.
    """
    if not se >= 0:
        raise ContrastError(f"standard error must be >= 0, got {se}")
    diff = estimate - null
    if se == 0:
        if diff == 0:
            return math.nan, 1.0, True
        return math.copysign(math.inf, diff), 0.0, True
    z = diff / se
    return z, min(1.0, 2.0 * normal_sf(abs(z))), False


def _check_aligned(ra: EstimateResult, rb: EstimateResult) -> None:
    if ra.n != rb.n:
        raise ContrastError(f"estimates use different datasets (n = {ra.n} vs {rb.n})")
    if ra.estimator == rb.estimator == "tmle" and ra.t_ref != rb.t_ref:
        raise ContrastError(
            f"referent trials differ: {sorted(ra.t_ref)} vs {sorted(rb.t_ref)}")
    if ra.scale != rb.scale:
        raise ContrastError(f"scales differ: {ra.scale} vs {rb.scale}")


def contrast_difference(ra: EstimateResult, rb: EstimateResult) -> ContrastResult:
    """psi_b - psi_a with inference from the per-unit EIF difference.

    When both inputs are response rates whose own intervals were built on the
    logit scale, the interval and test use Fisher's z (atanh) so endpoints
    stay inside (-1, 1).
    """
    _check_aligned(ra, rb)
    d = rb.psi - ra.psi
    se = se_from_eif(rb.eif - ra.eif)
    if ra.ci_scale == rb.ci_scale == "logit" and abs(d) < 1:
        zd = math.atanh(d)
        se_z = se / (1.0 - d * d)
        z, p, degen = wald_test(zd, se_z)
        ci = (math.tanh(zd - Z95 * se_z), math.tanh(zd + Z95 * se_z))
        return ContrastResult("difference", d, d, se, ci, z, p, (ra, rb), "atanh", degen)
    z, p, degen = wald_test(d, se)
    return ContrastResult("difference", d, d, se, (d - Z95 * se, d + Z95 * se), z, p,
                          (ra, rb), "identity", degen)


def contrast_geomean_ratio(ra_log: EstimateResult, rb_log: EstimateResult) -> ContrastResult:
    """Ratio of geometric means, 10 ** (psi_b - psi_a), from log10-scale fits."""
    for r in (ra_log, rb_log):
        if r.scale != "log10":
            raise ContrastError(
                f"geometric-mean ratio needs log10-scale estimates, got {r.scale!r}")
    _check_aligned(ra_log, rb_log)
    d = rb_log.psi - ra_log.psi
    se = se_from_eif(rb_log.eif - ra_log.eif)
    z, p, degen = wald_test(d, se)
    ci = (10.0 ** (d - Z95 * se), 10.0 ** (d + Z95 * se))
    return ContrastResult("log-ratio", float(10.0 ** d), d, se, ci, z, p,
                          (ra_log, rb_log), "log10", degen)


def joint_se(ra: EstimateResult, rb: EstimateResult) -> float:
    """sqrt(se_a^2 + se_b^2 - 2 cov_ab) from the two EIF vectors."""
    n = ra.n
    cov = float(np.cov(ra.eif, rb.eif, ddof=1)[0, 1]) / n
    return math.sqrt(max(ra.se ** 2 + rb.se ** 2 - 2 * cov, 0.0))
