"""Within-stratum outcome models, dose-response surface and causal estimands."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import glm
from .errors import SingularDesign, StratumTooSmall
from .propensity import StratifiedPropensityFit, fit_propensity

log = logging.getLogger(__name__)

RATE_DENOMINATOR = 10_000.0
EXPOSURE_TERMS = ("z", "g", "lambda", "z:g")


def default_grid(step=0.02):
    n = int(round(1.0 / step))
    return np.arange(n + 1) / n


@dataclass(frozen=True)
class EstimationConfig:
    K: int = 5
    trim_rule: str = "minmax"
    trim_alpha: float = 0.0
    quantile_reference: str = "treated"
    gps_include_z: bool = True
    zg_interaction: bool = False
    g_grid: tuple = field(default_factory=lambda: tuple(default_grid()))

    def __post_init__(self):
        grid = np.asarray(self.g_grid, dtype=float)
        object.__setattr__(self, "g_grid", tuple(grid.tolist()))
        if self.K < 1:
            raise ValueError("K must be positive")
        if grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("g_grid must be strictly increasing with at least two points")
        if grid[0] != 0.0 or grid[-1] > 1.0:
            raise ValueError("g_grid must start at 0 and stay within [0, 1]")
        if self.quantile_reference not in ("treated", "all"):
            raise ValueError("quantile_reference must be 'treated' or 'all'")

    @property
    def grid(self):
        return np.asarray(self.g_grid)


@dataclass(frozen=True, eq=False)
class DoseResponseSurface:
    g_grid: np.ndarray
    mu_strata: np.ndarray        # (K, 2, len(grid)): stratum k, z, g
    mu: np.ndarray               # (2, len(grid)) pooled
    stratum_weights: np.ndarray
    scale: str
    extrapolation: np.ndarray    # per stratum: grid fraction outside observed G range

    def rows(self):
        """(z, g, stratum, mu) tuples; stratum 0 is the pooled curve."""
        out = []
        for z in (0, 1):
            for k in range(self.mu_strata.shape[0]):
                out += [(z, g, k + 1, m) for g, m in zip(self.g_grid, self.mu_strata[k, z])]
        return out


@dataclass(frozen=True, eq=False)
class EffectEstimates:
    g_grid: np.ndarray
    tau_of_g: np.ndarray
    tau: float
    delta: np.ndarray            # (2, len(grid)): delta(g; z)
    Delta0: float
    Delta1: float
    intervals: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "g_grid": self.g_grid.tolist(),
            "tau_of_g": self.tau_of_g.tolist(),
            "tau": self.tau,
            "delta_z0": self.delta[0].tolist(),
            "delta_z1": self.delta[1].tolist(),
            "Delta0": self.Delta0,
            "Delta1": self.Delta1,
        }
        if self.intervals:
            out["intervals"] = self.intervals
        return out


def outcome_model_names(schema, zg_interaction=False):
    names = ("z", "g", "lambda") + (("z:g",) if zg_interaction else ())
    return names + tuple(f"out.{c}" for c in schema.x_out_outcome)


def fit_outcome_models(frame, schema, strata: StratifiedPropensityFit, zg_interaction=False):
    """Per-stratum regression of Y on (Z, G, lambda-hat, outcome covariates).

    Poisson fits use log(offset) as the offset; normal fits use none.
    """
    family = schema.family
    names = outcome_model_names(schema, zg_interaction)
    fits = []
    for k in range(1, strata.K + 1):
        idx = strata.members(k)
        if idx.size < len(names) + 2:
            raise StratumTooSmall(f"stratum {k} has {idx.size} units for the outcome model",
                                  stratum=k, n=int(idx.size))
        sub = frame.take(idx)
        X = sub.design(names, lambda_=strata.lambda_hat[idx])
        offset = np.log(sub.offset) if family == "poisson_offset" else None
        try:
            fit = glm.fit(glm.GlmSpec(family, names), X, sub.y, offset)
        except SingularDesign as exc:
            exc.details["stratum"] = k
            raise
        if not fit.converged:
            log.warning("outcome model in stratum %d did not converge: %s", k, fit.message)
        fits.append(fit)
    return tuple(fits)


def _split(fit, sub, exposure_terms=EXPOSURE_TERMS):
    """Intercept-plus-covariate part of the linear predictor and the exposure
    coefficients (0.0 when a term is absent)."""
    names = fit.spec.predictors
    coef = fit.coefficients
    cov = [k for k, n in enumerate(names) if n not in exposure_terms]
    base = coef[0] + sub.design([names[k] for k in cov]) @ coef[1:][cov]
    terms = {t: (coef[1 + names.index(t)] if t in names else 0.0) for t in exposure_terms}
    return base, terms


def counterfactual_gps(lambda_fit, sub, z, grid):
    """lambda-hat_i(z, g) for every row of ``sub`` and every g in ``grid``."""
    base, terms = _split(lambda_fit, sub)
    mean = base + terms["z"] * z
    var = lambda_fit.residual_variance
    r = np.asarray(grid)[None, :] - mean[:, None]
    return np.exp(-0.5 * r * r / var) / np.sqrt(2.0 * np.pi * var)


def counterfactual_outcomes(outcome_fit, lambda_fit, sub, z, grid, log_offset=None):
    """Y-hat_i(z, g) over the grid, with lambda re-evaluated at (z, g)."""
    grid = np.asarray(grid)
    lam = counterfactual_gps(lambda_fit, sub, z, grid)
    base, t = _split(outcome_fit, sub)
    eta = (base[:, None] + t["z"] * z + t["g"] * grid[None, :] + t["lambda"] * lam
           + t["z:g"] * z * grid[None, :])
    if outcome_fit.family == "poisson_offset":
        return np.exp(eta + (0.0 if log_offset is None else log_offset)), lam
    return eta, lam


def predict_surface(outcome_fits, strata: StratifiedPropensityFit, frame, g_grid):
    grid = np.asarray(g_grid, dtype=float)
    K = strata.K
    family = outcome_fits[0].family
    scale = "rate_per_10k" if family == "poisson_offset" else "outcome_native"
    log_offset = np.log(RATE_DENOMINATOR) if family == "poisson_offset" else None
    mu_strata = np.empty((K, 2, grid.size))
    extrap = np.empty(K)
    for k in range(1, K + 1):
        idx = strata.members(k)
        sub = frame.take(idx)
        for z in (0, 1):
            yhat, _ = counterfactual_outcomes(outcome_fits[k - 1], strata.lambda_fits[k - 1],
                                              sub, z, grid, log_offset)
            mu_strata[k - 1, z] = yhat.mean(axis=0)
        lo, hi = sub.g.min(), sub.g.max()
        extrap[k - 1] = np.mean((grid < lo) | (grid > hi))
    mu = np.zeros((2, grid.size))
    for k in range(K):
        mu += strata.stratum_weights[k] * mu_strata[k]
    for a in (mu_strata, mu, extrap):
        a.setflags(write=False)
    return DoseResponseSurface(g_grid=grid, mu_strata=mu_strata, mu=mu,
                               stratum_weights=strata.stratum_weights, scale=scale,
                               extrapolation=extrap)


def estimands(surface: DoseResponseSurface, g_values) -> EffectEstimates:
    """tau(g), delta(g; z) on the grid and their averages over observed G.

    Surface values at each observed G are linearly interpolated on the grid.
    """
    grid = surface.g_grid
    mu = surface.mu
    zero = int(np.flatnonzero(grid == 0.0)[0])
    tau_of_g = mu[1] - mu[0]
    delta = mu - mu[:, zero:zero + 1]
    g = np.asarray(g_values, dtype=float)
    at_g = np.vstack([np.interp(g, grid, mu[0]), np.interp(g, grid, mu[1])])
    tau = float(np.mean(at_g[1] - at_g[0]))
    Delta0 = float(np.mean(at_g[0] - mu[0, zero]))
    Delta1 = float(np.mean(at_g[1] - mu[1, zero]))
    return EffectEstimates(g_grid=grid, tau_of_g=tau_of_g, tau=tau, delta=delta,
                           Delta0=Delta0, Delta1=Delta1)


@dataclass(frozen=True, eq=False)
class PipelineResult:
    propensity: StratifiedPropensityFit
    outcome_fits: tuple
    surface: DoseResponseSurface
    effects: EffectEstimates


def run_pipeline(frame, schema, config: EstimationConfig = EstimationConfig()) -> PipelineResult:
    """Propensity fit, strata, GPS, outcome models, surface and estimands."""
    strata = fit_propensity(frame, schema, K=config.K, trim_rule=config.trim_rule,
                            trim_alpha=config.trim_alpha,
                            quantile_reference=config.quantile_reference,
                            gps_include_z=config.gps_include_z)
    fits = fit_outcome_models(frame, schema, strata, config.zg_interaction)
    surface = predict_surface(fits, strata, frame, config.grid)
    effects = estimands(surface, frame.g)
    return PipelineResult(strata, fits, surface, effects)


STATISTIC_NAMES = ("tau", "Delta0", "Delta1", "tau_of_g", "mu0", "mu1", "delta0", "delta1")


def statistics(result: PipelineResult):
    """Flat named arrays for bootstrap reduction."""
    e, s = result.effects, result.surface
    return {
        "tau": np.array([e.tau]), "Delta0": np.array([e.Delta0]),
        "Delta1": np.array([e.Delta1]), "tau_of_g": e.tau_of_g,
        "mu0": s.mu[0], "mu1": s.mu[1], "delta0": e.delta[0], "delta1": e.delta[1],
    }


def pipeline_statistics(frame, schema, config):
    return statistics(run_pipeline(frame, schema, config))
