"""Logistic, normal and Poisson-with-offset regression by IRLS.

Predictors are z-scored internally; coefficients are reported on the
original scale with the intercept first.  Design matrices passed to
:func:`fit` and the ``x`` arguments of the prediction helpers never include
the intercept column.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, LengthMismatch, SingularDesign

FAMILIES = ("logistic", "normal", "poisson_offset")

SCORE_TOL = 1e-8
DEVIANCE_TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 10
PROB_CLAMP = 1e-12
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class GlmSpec:
    family: str
    predictors: tuple = ()
    include_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if len(set(self.predictors)) != len(self.predictors):
            raise ValueError("predictor names must be unique")
        if not self.include_intercept:
            raise ValueError("models always include an intercept")

    @property
    def n_coef(self):
        return len(self.predictors) + 1


@dataclass(frozen=True, eq=False)
class GlmFit:
    spec: GlmSpec
    coefficients: np.ndarray
    converged: bool
    iterations: int
    max_abs_score: float
    deviance: float
    n_obs: int
    design_column_means: np.ndarray
    design_column_sds: np.ndarray
    residual_variance: float = float("nan")
    separated: bool = False
    message: str = ""
    deviance_trace: tuple = field(default=(), repr=False)

    @property
    def family(self):
        return self.spec.family

    @property
    def params(self):
        return dict(zip(("intercept", *self.spec.predictors), self.coefficients.tolist()))

    def to_dict(self):
        return {
            "family": self.spec.family,
            "predictors": list(self.spec.predictors),
            "coefficients": self.coefficients.tolist(),
            "residual_variance": None if math.isnan(self.residual_variance)
            else self.residual_variance,
            "converged": self.converged,
            "iterations": self.iterations,
            "max_abs_score": self.max_abs_score,
            "deviance": self.deviance,
            "n_obs": self.n_obs,
            "separated": self.separated,
            "message": self.message,
        }


def _expit(eta):
    # stable for large |eta|
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _mean(family, eta):
    if family == "logistic":
        return _expit(eta)
    if family == "poisson_offset":
        return np.exp(eta)
    return eta


def _deviance(family, y, mu):
    if family == "logistic":
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = np.where(y > 0, y * np.log(mu), 0.0) + np.where(y < 1, (1 - y) * np.log1p(-mu), 0.0)
        return float(-2.0 * ll.sum())
    if family == "poisson_offset":
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(y > 0, y * np.log(y / mu), 0.0)
        return float(2.0 * (t - (y - mu)).sum())
    r = y - mu
    return float(r @ r)


def _variance(family, mu):
    if family == "logistic":
        return mu * (1.0 - mu)
    if family == "poisson_offset":
        return mu
    return np.ones_like(mu)


def _standardize(X, names):
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    scale = np.maximum(1.0, np.abs(means))
    for k in np.flatnonzero(sds <= 1e-12 * scale):
        raise SingularDesign(f"predictor {names[k]!r} has zero variance", predictor=names[k])
    return means, sds


def fit(spec: GlmSpec, design, response, offset=None) -> GlmFit:
    """Maximum-likelihood fit by IRLS with step-halving.

    Stops when the largest absolute score falls below 1e-8 or the relative
    deviance change falls below 1e-10, after at most 100 iterations.
    Logistic separation and all-zero Poisson responses give a fit with
    ``converged=False`` rather than an exception.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if spec.predictors else X.reshape(-1, 0)
    n, p = X.shape
    if y.shape != (n,):
        raise LengthMismatch(f"design has {n} rows but response has {y.size} values")
    if p != len(spec.predictors):
        raise DimensionMismatch(f"design has {p} columns, spec names {len(spec.predictors)}")
    family = spec.family
    if family == "poisson_offset":
        if offset is None:
            raise LengthMismatch("poisson_offset family requires an offset")
        off = np.asarray(offset, dtype=float)
        if off.shape != (n,):
            raise LengthMismatch("offset length differs from response")
    elif offset is not None:
        raise LengthMismatch(f"offset not allowed for family {family!r}")
    else:
        off = np.zeros(n)
    if n < p + 1:
        raise SingularDesign(f"{n} observations for {p + 1} coefficients")

    means, sds = _standardize(X, spec.predictors) if p else (np.zeros(0), np.zeros(0))
    Xs = np.empty((n, p + 1))
    Xs[:, 0] = 1.0
    if p:
        Xs[:, 1:] = (X - means) / sds
    sv = np.linalg.svd(Xs, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise SingularDesign("design is rank deficient after standardization",
                             condition=float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf"))

    separated, message = False, ""
    if family == "normal":
        b, *_ = np.linalg.lstsq(Xs, y, rcond=None)
        mu = Xs @ b
        dev = _deviance(family, y, mu)
        iterations, converged, trace = 1, True, (dev,)
    else:
        b, iterations, converged, trace, separated, message = _irls(family, Xs, y, off)
        mu = _mean(family, Xs @ b + off)
        dev = trace[-1]

    coef = np.empty(p + 1)
    coef[1:] = b[1:] / sds if p else b[1:]
    coef[0] = b[0] - (coef[1:] @ means if p else 0.0)
    X1 = np.column_stack([np.ones(n), X])
    score = X1.T @ (y - _mean(family, X1 @ coef + off))
    max_abs_score = float(np.abs(score).max())
    resvar = float("nan")
    if family == "normal":
        resvar = dev / (n - p - 1) if n > p + 1 else float("nan")
    for a in (coef, means, sds):
        a.setflags(write=False)
    return GlmFit(spec=spec, coefficients=coef, converged=converged, iterations=iterations,
                  max_abs_score=max_abs_score, deviance=dev, n_obs=n,
                  design_column_means=means, design_column_sds=sds,
                  residual_variance=resvar, separated=separated, message=message,
                  deviance_trace=trace)


def _irls(family, Xs, y, off):
    n = len(y)
    b = np.zeros(Xs.shape[1])
    if family == "logistic":
        ybar = y.mean()
        if ybar <= 0.0 or ybar >= 1.0:
            mu = np.full(n, ybar)
            return b, 0, False, (_deviance(family, y, np.clip(mu, PROB_CLAMP, 1 - PROB_CLAMP)),), \
                True, "response has no variation"
        b[0] = math.log(ybar / (1 - ybar))
    else:
        total = y.sum()
        if total <= 0.0:
            b[0] = -30.0 - off.max()
            mu = np.exp(Xs @ b + off)
            return b, 0, False, (_deviance(family, y, mu),), False, "all-zero response"
        b[0] = math.log(total / np.exp(off).sum())

    eta = Xs @ b + off
    mu = _mean(family, eta)
    dev = _deviance(family, y, mu)
    trace = [dev]
    converged, message = False, ""
    it = 0
    for it in range(1, MAX_ITER + 1):
        w = _variance(family, mu)
        score = Xs.T @ (y - mu)
        H = (Xs * w[:, None]).T @ Xs
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, score, rcond=None)[0]
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            b_new = b + t * step
            eta_new = Xs @ b_new + off
            mu_new = _mean(family, eta_new)
            dev_new = _deviance(family, y, mu_new)
            if math.isfinite(dev_new) and dev_new <= dev * (1 + 1e-12) + 1e-300:
                break
            t *= 0.5
        else:
            message = "step-halving failed to reduce deviance"
            break
        b, mu = b_new, mu_new
        change = abs(dev_new - dev) / (abs(dev_new) + 0.1)
        dev = dev_new
        trace.append(dev)
        new_score = np.abs(Xs.T @ (y - mu)).max()
        if new_score < SCORE_TOL or change < DEVIANCE_TOL:
            converged = True
            break
    if converged and new_score >= SCORE_TOL:
        # deviance stalled first; a few undamped Newton steps pin the score down
        for _ in range(3):
            w = _variance(family, mu)
            try:
                step = np.linalg.solve((Xs * w[:, None]).T @ Xs, Xs.T @ (y - mu))
            except np.linalg.LinAlgError:
                break
            b_new = b + step
            mu_new = _mean(family, Xs @ b_new + off)
            s_new = np.abs(Xs.T @ (y - mu_new)).max()
            if not np.isfinite(s_new) or s_new >= new_score:
                break
            b, mu, new_score = b_new, mu_new, s_new
            dev = _deviance(family, y, mu)
            trace.append(dev)
            if new_score < SCORE_TOL:
                break
    separated = False
    if family == "logistic":
        eta = Xs @ b + off
        extreme = np.abs(eta) > 30
        if extreme.any():
            separated = True
            converged = False
            message = "perfect or quasi-complete separation"
    if not converged and not message:
        message = f"no convergence after {it} iterations"
    return b, it, converged, tuple(trace), separated, message


def _as_rows(fit, x):
    x = np.asarray(x, dtype=float)
    p = len(fit.spec.predictors)
    if x.ndim == 0 or x.shape[-1] != p:
        raise DimensionMismatch(f"expected {p} predictor values, got shape {x.shape}")
    return x


def linear_predictor(fit: GlmFit, x):
    x = _as_rows(fit, x)
    return fit.coefficients[0] + x @ fit.coefficients[1:]


def predict_probability(fit: GlmFit, x):
    """P(Z=1 | x) from a logistic fit, clamped to [1e-12, 1 - 1e-12]."""
    eta = np.atleast_1d(np.asarray(linear_predictor(fit, x), dtype=float))
    p = np.clip(_expit(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return p if np.ndim(x) > 1 else float(p[0])


def gps_density(fit: GlmFit, x, g):
    """Normal density of ``g`` given predictors, using the fit's residual variance."""
    if not fit.residual_variance > 0:
        raise ValueError("gps_density requires a normal fit with positive residual variance")
    mean = linear_predictor(fit, x)
    var = fit.residual_variance
    r = np.asarray(g, dtype=float) - mean
    return np.exp(-0.5 * r * r / var) / math.sqrt(2.0 * math.pi * var)


def predict_mean(fit: GlmFit, x, offset=None):
    """exp(x'b + offset) for Poisson fits, x'b for normal fits."""
    eta = linear_predictor(fit, x)
    if fit.family == "poisson_offset":
        return np.exp(eta + (0.0 if offset is None else np.asarray(offset, dtype=float)))
    if fit.family == "logistic":
        raise ValueError("use predict_probability for logistic fits")
    if offset is not None:
        eta = eta + np.asarray(offset, dtype=float)
    return eta
