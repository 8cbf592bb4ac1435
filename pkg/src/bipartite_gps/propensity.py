"""Key-associated propensity score, overlap trimming, subclassification,
covariate balance and the within-stratum generalized propensity score."""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import glm
from .errors import (
    DegenerateQuantiles,
    EmptyAfterTrim,
    SeparationError,
    StratumTooSmall,
)

log = logging.getLogger(__name__)

QUANTILE_METHOD = "hazen"


def quantile(values, q, axis=None):
    """Midpoint-interpolated quantile: order statistic k sits at (k - 0.5) / n."""
    return np.quantile(np.asarray(values, dtype=float), q, axis=axis, method=QUANTILE_METHOD)


def z_model_names(schema):
    return (tuple(f"int.{c}" for c in schema.x_int_z)
            + tuple(f"out.{c}" for c in schema.x_out_z))


def g_model_names(schema, include_z=True):
    names = (tuple(f"int.{c}" for c in schema.x_int_g)
             + tuple(f"out.{c}" for c in schema.x_out_g))
    return (("z",) + names) if include_z else names


@dataclass(frozen=True, eq=False)
class StratifiedPropensityFit:
    phi_fit: glm.GlmFit
    phi_hat: np.ndarray
    kept: np.ndarray
    cutpoints: np.ndarray
    stratum: np.ndarray          # 1..K for kept units, 0 for trimmed units
    stratum_weights: np.ndarray  # pi_k over kept units
    lambda_fits: tuple
    lambda_hat: np.ndarray       # NaN for trimmed units

    @property
    def K(self):
        return len(self.stratum_weights)

    def members(self, k):
        """Row indices of stratum ``k`` (1-based), ascending."""
        return np.flatnonzero(self.stratum == k)

    def summary(self):
        return {
            "K": self.K,
            "n_total": int(self.kept.size),
            "n_kept": int(self.kept.sum()),
            "cutpoints": self.cutpoints.tolist(),
            "stratum_sizes": [int((self.stratum == k).sum()) for k in range(1, self.K + 1)],
            "stratum_weights": self.stratum_weights.tolist(),
            "phi_fit": self.phi_fit.to_dict(),
            "lambda_fits": [f.to_dict() for f in self.lambda_fits],
        }


def fit_key_ps(frame, schema):
    """Logistic fit of Z on the key unit's and the outcome unit's z-model covariates."""
    names = z_model_names(schema)
    if not names:
        raise ValueError("x_int_z and x_out_z are both empty")
    X = frame.design(names)
    z = frame.z
    if z.min() == z.max():
        raise SeparationError(f"key-associated treatment has no variation (all Z={int(z[0])})")
    fit = glm.fit(glm.GlmSpec("logistic", names), X, z)
    if fit.separated:
        log.warning("key-associated propensity model: %s", fit.message)
    phi_hat = glm.predict_probability(fit, X)
    return fit, np.asarray(phi_hat)


def common_support(phi_hat, z, rule="minmax", alpha=0.0):
    """Score interval [lo, hi] shared by both treatment groups.

    Each group's range is [min, max], or its [alpha, 1 - alpha] quantile
    interval with ``rule="quantile"``.
    """
    phi = np.asarray(phi_hat, dtype=float)
    z = np.asarray(z)
    t, c = phi[z == 1], phi[z == 0]
    if t.size == 0 or c.size == 0:
        raise EmptyAfterTrim("one treatment group is empty before trimming")
    if rule == "minmax":
        return max(t.min(), c.min()), min(t.max(), c.max())
    if rule == "quantile":
        if not 0.0 <= alpha <= 0.05:
            raise ValueError("quantile trimming alpha must lie in [0, 0.05]")
        return (max(quantile(t, alpha), quantile(c, alpha)),
                min(quantile(t, 1 - alpha), quantile(c, 1 - alpha)))
    raise ValueError(f"unknown trimming rule {rule!r}")


def trim_overlap(phi_hat, z, rule="minmax", alpha=0.0):
    """Keep units whose score lies inside the common support (one pass)."""
    phi = np.asarray(phi_hat, dtype=float)
    z = np.asarray(z)
    lo, hi = common_support(phi, z, rule, alpha)
    kept = (phi >= lo) & (phi <= hi)
    if not (kept & (z == 1)).any() or not (kept & (z == 0)).any():
        raise EmptyAfterTrim(f"no overlap: common support [{lo:.6g}, {hi:.6g}] empties a group",
                             lower=float(lo), upper=float(hi))
    return kept


def subclassify(phi_hat, z, kept, K=5, reference="treated"):
    """Cut kept units into K strata at quantiles of the reference group's scores.

    Intervals are left-closed; the first and last strata are open-ended so
    every kept unit is labelled.  Trimmed units get label 0.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    phi = np.asarray(phi_hat, dtype=float)
    kept = np.asarray(kept, dtype=bool)
    z = np.asarray(z)
    ref = phi[kept & (z == 1)] if reference == "treated" else phi[kept]
    if np.unique(ref).size < K:
        raise DegenerateQuantiles(
            f"only {np.unique(ref).size} distinct scores for {K} strata")
    cut = quantile(ref, np.arange(1, K) / K)
    collapsed = np.flatnonzero(np.diff(cut) <= 0)
    if collapsed.size:
        pairs = [(float(cut[k]), float(cut[k + 1])) for k in collapsed]
        raise DegenerateQuantiles(f"tied cutpoints collapse strata: {pairs}", cutpoints=pairs)
    stratum = np.where(kept, np.searchsorted(cut, phi, side="right") + 1, 0)
    sizes = np.bincount(stratum[kept], minlength=K + 1)[1:]
    if (sizes == 0).any():
        k = int(np.flatnonzero(sizes == 0)[0]) + 1
        raise DegenerateQuantiles(f"stratum {k} is empty", stratum=k)
    return cut, stratum


def stratum_weights(stratum, K):
    counts = np.bincount(stratum[stratum > 0], minlength=K + 1)[1:]
    return counts / counts.sum()


def smd(x, z):
    """(mean_1 - mean_0) / sqrt((var_1 + var_0) / 2), sample variances.

    Returns +/-inf when both variances are zero but the means differ, 0.0 when
    nothing differs, and NaN when a group has fewer than two members.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z)
    x1, x0 = x[z == 1], x[z == 0]
    if x1.size < 2 or x0.size < 2:
        return float("nan")
    diff = x1.mean() - x0.mean()
    pooled = np.sqrt((x1.var(ddof=1) + x0.var(ddof=1)) / 2.0)
    if pooled <= 0:
        return 0.0 if diff == 0 else float(np.copysign(np.inf, diff))
    return float(diff / pooled)


def balance_covariates(frame):
    """All covariates of the key unit (``int.*``) and of the outcome unit (``out.*``)."""
    return ([f"int.{c}" for c in frame.int_covariate_names]
            + [f"out.{c}" for c in frame.out_covariate_names])


def balance_table(frame, schema, strata: StratifiedPropensityFit):
    """Standardized mean differences before stratification, per stratum and
    stratum-averaged (weights pi_k).  ``zero_variance`` flags covariates whose
    SMD is infinite somewhere."""
    names = balance_covariates(frame)
    X = frame.design(names)
    K = strata.K
    rows = []
    for c, name in enumerate(names):
        x = X[:, c]
        row = {"covariate": name, "smd_unadjusted": smd(x, frame.z)}
        per = []
        for k in range(1, K + 1):
            m = strata.stratum == k
            per.append(smd(x[m], frame.z[m]))
            row[f"smd_stratum_{k}"] = per[-1]
        row["smd_stratum_avg"] = float(np.dot(strata.stratum_weights, per))
        row["zero_variance"] = bool(np.isinf([row["smd_unadjusted"], *per]).any())
        rows.append(row)
    return pd.DataFrame.from_records(rows)


def fit_stratum_gps(frame, schema, stratum, K, include_z=True):
    """Per-stratum normal regression of G; returns (fits, lambda_hat).

    Z is dropped from a stratum's model when it does not vary there.
    """
    lambda_hat = np.full(frame.n, np.nan)
    fits = []
    for k in range(1, K + 1):
        idx = np.flatnonzero(stratum == k)
        sub = frame.take(idx)
        use_z = include_z and sub.z.min() != sub.z.max()
        names = g_model_names(schema, use_z)
        X = sub.design(names)
        p = len(names)
        if idx.size < p + 2:
            raise StratumTooSmall(f"stratum {k} has {idx.size} units, needs {p + 2}",
                                  stratum=k, n=int(idx.size))
        fit = glm.fit(glm.GlmSpec("normal", names), X, sub.g)
        if not fit.residual_variance >= glm.VARIANCE_FLOOR:
            raise StratumTooSmall(
                f"stratum {k}: GPS residual variance {fit.residual_variance:.3g} below floor",
                stratum=k)
        fits.append(fit)
        lambda_hat[idx] = glm.gps_density(fit, X, sub.g)
    return tuple(fits), lambda_hat


def gps_at(strata: StratifiedPropensityFit, frame, k, z, g):
    """Counterfactual lambda-hat at (z, g) for every row of ``frame``, using
    stratum ``k``'s GPS model."""
    fit = strata.lambda_fits[k - 1]
    X = frame.design(fit.spec.predictors, z=z)
    return glm.gps_density(fit, X, g)


def joint_score(strata: StratifiedPropensityFit, i, z, g, frame):
    """Joint score psi = phi(z) * lambda(g; z) for unit ``i``."""
    p1 = strata.phi_hat[i]
    phi = p1 if z == 1 else 1.0 - p1
    k = int(strata.stratum[i])
    lam = float(gps_at(strata, frame.take([i]), k, z, g)[0])
    return phi * lam


def fit_propensity(frame, schema, K=5, trim_rule="minmax", trim_alpha=0.0,
                   quantile_reference="treated", gps_include_z=True):
    phi_fit, phi_hat = fit_key_ps(frame, schema)
    kept = trim_overlap(phi_hat, frame.z, trim_rule, trim_alpha)
    cut, stratum = subclassify(phi_hat, frame.z, kept, K, quantile_reference)
    fits, lambda_hat = fit_stratum_gps(frame, schema, stratum, K, gps_include_z)
    for a in (phi_hat, kept, cut, stratum, lambda_hat):
        a.setflags(write=False)
    return StratifiedPropensityFit(
        phi_fit=phi_fit, phi_hat=phi_hat, kept=kept, cutpoints=cut, stratum=stratum,
        stratum_weights=stratum_weights(stratum, K), lambda_fits=fits, lambda_hat=lambda_hat)
