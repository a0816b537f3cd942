"""Regression solvers used for nuisance fits and the targeting steps.

Everything here is a deterministic pure function of its inputs: logistic
regression by IRLS (quasi-binomial, so fractional outcomes in [0, 1] are
fine), weighted least squares by QR, and the one-parameter logistic
fluctuation used by the TMLE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import expit, xlogy

MAX_ITER = 100
DEVIANCE_TOL = 1e-10
SEPARATION_EPS = 1e-10
COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class DesignMatrix:
    """Column-named design matrix; column 0 is always the intercept."""

    values: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise ValueError("design values and column names disagree")
        if self.values.shape[1] < 1:
            raise ValueError("design needs at least an intercept column")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("design matrix has non-finite entries")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def take(self, rows) -> "DesignMatrix":
        return DesignMatrix(self.values[rows], self.columns)


@dataclass(frozen=True)
class GlmFit:
    family: Literal["logistic", "linear"]
    coefficients: np.ndarray
    converged: bool
    iterations: int
    deviance: float
    separated: bool = False
    dropped: tuple[int, ...] = field(default=())


@dataclass(frozen=True)
class FluctuationFit:
    epsilon: float
    converged: bool
    iterations: int = 0
    score: float = 0.0


def _matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _check_inputs(x, y, w):
    n = x.shape[0]
    if y.shape != (n,):
        raise ValueError(f"outcome length {y.shape} does not match {n} design rows")
    if w.shape != (n,):
        raise ValueError(f"weight length {w.shape} does not match {n} design rows")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if not w.sum() > 0:
        raise ValueError("weights sum to zero")
    if not np.all(np.isfinite(y)):
        raise ValueError("outcome has non-finite entries")


def independent_columns(x: np.ndarray, w: np.ndarray | None = None,
                        tol: float = COLLINEAR_TOL) -> list[int]:
    """Greedy left-to-right column selection; a column that is (numerically)
    in the span of the columns kept before it is dropped."""
    xs = x if w is None else x * np.sqrt(w)[:, None]
    basis: list[np.ndarray] = []
    kept = []
    for j in range(xs.shape[1]):
        v = xs[:, j].astype(float, copy=True)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        for _ in range(2):  # twice is enough (Kahan)
            for q in basis:
                v -= (q @ v) * q
        r = np.linalg.norm(v)
        if r <= tol * norm:
            continue
        basis.append(v / r)
        kept.append(j)
    return kept


def _bernoulli_deviance(y, p, w):
    return 2.0 * np.sum(w * (xlogy(y, y) - xlogy(y, p)
                             + xlogy(1 - y, 1 - y) - xlogy(1 - y, 1 - p)))


def fit_logistic(x, y, w=None, offset=None, max_iter: int = MAX_ITER,
                 tol: float = DEVIANCE_TOL) -> GlmFit:
    """Weighted (quasi-)binomial logistic regression by IRLS.

    Never raises on numerical trouble: hitting ``max_iter`` or detecting
    separation returns ``converged=False`` with the last stable coefficients.
    """
    x = _matrix(x)
    n, k = x.shape
    y = np.asarray(y, dtype=float)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    _check_inputs(x, y, w)
    if offset.shape != (n,) or not np.all(np.isfinite(offset)):
        raise ValueError("offset must be a finite vector with one entry per row")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("logistic outcome must lie in [0, 1]")

    kept = independent_columns(x, w)
    xk = x[:, kept]
    live = w > 0
    beta = np.zeros(len(kept))
    p = expit(offset)
    dev = _bernoulli_deviance(y, p, w)
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        wr = w * p * (1 - p)
        grad = xk.T @ (w * (y - p))
        info = (xk * wr[:, None]).T @ xk
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        # step-halving on deviance increase
        for _ in range(30):
            new_beta = beta + step
            new_p = expit(offset + xk @ new_beta)
            new_dev = _bernoulli_deviance(y, new_p, w)
            if np.isfinite(new_dev) and new_dev <= dev + 1e-12 * (abs(dev) + 1):
                break
            step = step / 2
        pl = new_p[live]
        if (np.any(pl < SEPARATION_EPS) or np.any(pl > 1 - SEPARATION_EPS)) and \
                np.linalg.norm(new_beta) > np.linalg.norm(beta):
            separated = True
            break
        change = abs(dev - new_dev)
        beta, p, dev = new_beta, new_p, new_dev
        if change < tol * (abs(dev) + 0.1):
            converged = True
            break

    coef = np.zeros(k)
    coef[kept] = beta
    return GlmFit("logistic", coef, converged, it, float(dev), separated,
                  tuple(j for j in range(k) if j not in kept))


def fit_linear(x, y, w=None) -> GlmFit:
    """Weighted least squares via QR; trailing collinear columns get 0."""
    x = _matrix(x)
    n, k = x.shape
    y = np.asarray(y, dtype=float)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    _check_inputs(x, y, w)
    kept = independent_columns(x, w)
    sw = np.sqrt(w)
    q, r = np.linalg.qr(x[:, kept] * sw[:, None])
    beta = np.linalg.solve(r, q.T @ (sw * y))
    coef = np.zeros(k)
    coef[kept] = beta
    resid = y - x @ coef
    return GlmFit("linear", coef, True, 1, float(np.sum(w * resid ** 2)), False,
                  tuple(j for j in range(k) if j not in kept))


def predict(fit: GlmFit, x, offset=None) -> np.ndarray:
    x = _matrix(x)
    if x.shape[1] != fit.coefficients.shape[0]:
        raise ValueError(f"design has {x.shape[1]} columns, fit has "
                         f"{fit.coefficients.shape[0]} coefficients")
    eta = x @ fit.coefficients
    if offset is not None:
        offset = np.asarray(offset, dtype=float)
        if offset.shape != eta.shape:
            raise ValueError("offset length does not match design rows")
        eta = eta + offset
    if fit.family == "logistic":
        return expit(eta)
    return eta


def _quasi_loglik(eta, y, w):
    return np.sum(w * (y * eta - np.logaddexp(0.0, eta)))


def fit_fluctuation(offset_logit, h, y, weights=None, tol: float = 1e-10,
                    max_iter: int = MAX_ITER) -> FluctuationFit:
    """Maximize the quasi-binomial likelihood of
    ``expit(offset_logit + eps * h)`` over the scalar ``eps``.

    Newton with step-halving; stops once the score
    ``sum(w * h * (y - p))`` is below ``tol`` in absolute value.
    """
    off = np.asarray(offset_logit, dtype=float)
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    n = off.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if not (h.shape == y.shape == w.shape == (n,)):
        raise ValueError("offset, covariate, outcome and weights must align")
    if not np.all(np.isfinite(off)):
        raise ValueError("offset has non-finite entries; truncate predictions before logit")
    if not np.all(np.isfinite(h)):
        raise ValueError("clever covariate has non-finite entries")
    if np.any((y < 0) | (y > 1)) or np.any(w < 0):
        raise ValueError("outcome must lie in [0, 1] and weights be non-negative")

    wh = w * h
    if not np.any(wh != 0):
        return FluctuationFit(0.0, True, 0, 0.0)

    eps = 0.0
    p = expit(off)
    score = float(np.sum(wh * (y - p)))
    ll = _quasi_loglik(off, y, w)
    it = 0
    while abs(score) > tol and it < max_iter:
        it += 1
        info = float(np.sum(wh * h * p * (1 - p)))
        if not info > 0:
            break
        step = score / info
        for _ in range(60):
            eta = off + (eps + step) * h
            new_ll = _quasi_loglik(eta, y, w)
            if new_ll >= ll - 1e-14 * abs(ll):
                break
            step /= 2
        if step == 0.0 or eps + step == eps:
            break
        eps += step
        ll = new_ll
        p = expit(off + eps * h)
        score = float(np.sum(wh * (y - p)))
    # rounding floor of the score sum when no further step changes eps
    floor = 8 * np.finfo(float).eps * float(np.sum(np.abs(wh)))
    converged = abs(score) <= max(tol, floor)
    return FluctuationFit(float(eps), bool(converged), it, score)
