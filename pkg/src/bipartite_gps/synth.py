"""Synthetic bipartite datasets with a plume-kernel interference map and a
known outcome model.

Sources and receptors sit uniformly in a square.  Influence decays as a
Gaussian in the distance between the receptor and the source shifted by a
uniform wind drift, scaled by a log-normal emission strength.  Covariates on
both sides share a smooth spatial field, which confounds Z and G with the
outcome unless the outcome model adjusts for the receptor covariates.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .data_model import BipartiteDataset, CovariateSchema, InterferenceMap
from .effects import RATE_DENOMINATOR, default_grid
from .exposure import derive_exposures

INT_COVARIATES = ("capacity", "age")
OUT_COVARIATES = ("urban", "income", "smoking")


@dataclass(frozen=True)
class SynthConfig:
    n_outcome: int = 2000
    n_interventional: int = 300
    extent_km: float = 1000.0
    sigma_km: float = 80.0
    drift_km: tuple = (40.0, 0.0)
    emission_log_sd: float = 0.5
    sparsity_threshold: float = 1e-6
    field_noise_sd: float = 0.5
    # S_j ~ Bernoulli(expit(intercept + capacity * c0 + age * c1))
    treatment_intercept: float = 0.0
    treatment_coefs: tuple = (0.6, 0.3)
    # log rate (or mean) = beta_0 + beta_z z + beta_g g + beta_zg z g + X_out beta_x
    beta_0: float = float(np.log(60.0 / RATE_DENOMINATOR))
    beta_z: float = -0.3
    beta_g: float = -0.8
    beta_zg: float = 0.0
    beta_x: tuple = (0.3, -0.2, 0.25)
    family: str = "poisson_offset"
    offset_range: tuple = (2000.0, 8000.0)
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("drift_km", "treatment_coefs", "beta_x", "offset_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not self.sigma_km > 0:
            raise ValueError("sigma_km must be positive")
        if self.n_interventional < 2:
            raise ValueError("need at least two interventional units")
        if self.n_outcome < 1 or self.extent_km <= 0:
            raise ValueError("n_outcome and extent_km must be positive")
        if len(self.treatment_coefs) != len(INT_COVARIATES):
            raise ValueError(f"treatment_coefs needs {len(INT_COVARIATES)} values")
        if len(self.beta_x) != len(OUT_COVARIATES):
            raise ValueError(f"beta_x needs {len(OUT_COVARIATES)} values")
        if self.family not in ("poisson_offset", "normal"):
            raise ValueError(f"unknown family {self.family!r}")
        if not 0 < self.offset_range[0] <= self.offset_range[1]:
            raise ValueError("offset_range must be positive and ordered")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GroundTruth:
    """Closed-form dose-response: coefficients plus the sample covariate moment.

    ``covariate_moment`` is mean_i exp(x_i'beta_x) for the Poisson family
    (rates per 10,000) and mean_i x_i'beta_x for the normal family.
    """
    family: str
    beta_0: float
    beta_z: float
    beta_g: float
    beta_zg: float
    beta_x: tuple
    covariate_moment: float
    scale: float = RATE_DENOMINATOR

    def mu(self, z, g):
        g = np.asarray(g, dtype=float)
        lin = self.beta_0 + self.beta_z * z + (self.beta_g + self.beta_zg * z) * g
        if self.family == "poisson_offset":
            return self.scale * np.exp(lin) * self.covariate_moment
        return lin + self.covariate_moment

    def to_dict(self):
        return asdict(self)


def default_schema():
    return CovariateSchema(
        x_int_z=INT_COVARIATES, x_out_z=OUT_COVARIATES, x_int_g=(),
        x_out_g=OUT_COVARIATES, x_out_outcome=OUT_COVARIATES, family="poisson_offset")


def _spatial_field(loc, extent):
    # unit variance under the uniform placement
    u = loc / extent - 0.5
    return np.sqrt(6.0) * (u[:, 0] + u[:, 1])


def plume_kernel(receptors, sources, emissions, sigma, drift):
    d = receptors[:, None, :] - (sources[None, :, :] + np.asarray(drift, dtype=float))
    return emissions[None, :] * np.exp(-(d ** 2).sum(axis=2) / (2.0 * sigma ** 2))


def generate(config: SynthConfig):
    """Draw a dataset and its ground truth; deterministic given ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    n, J, L = config.n_outcome, config.n_interventional, config.extent_km
    sources = rng.uniform(0.0, L, size=(J, 2))
    receptors = rng.uniform(0.0, L, size=(n, 2))
    emissions = rng.lognormal(0.0, config.emission_log_sd, size=J)

    T = plume_kernel(receptors, sources, emissions, config.sigma_km, config.drift_km)
    keep = T >= config.sparsity_threshold * T.max()
    keep[np.arange(n), T.argmax(axis=1)] = True
    T = np.where(keep, T, 0.0)

    X_int = np.column_stack([
        _spatial_field(sources, L) + rng.normal(0.0, config.field_noise_sd, J),
        rng.normal(0.0, 1.0, J),
    ])
    X_out = np.column_stack([
        _spatial_field(receptors, L) + rng.normal(0.0, config.field_noise_sd, n),
        rng.normal(0.0, 1.0, n),
        rng.uniform(-1.0, 1.0, n),
    ])
    eta_s = config.treatment_intercept + X_int @ np.asarray(config.treatment_coefs)
    treated = (rng.uniform(size=J) < 1.0 / (1.0 + np.exp(-eta_s))).astype(np.int8)
    offsets = (rng.uniform(*config.offset_range, size=n) if config.family == "poisson_offset"
               else np.ones(n))

    schema = default_schema()
    if config.family != schema.family:
        schema = CovariateSchema(**{**schema.to_dict(), "family": config.family})
    ids_int = tuple(f"P{j:04d}" for j in range(J))
    ids_out = tuple(f"R{i:05d}" for i in range(n))
    interference = InterferenceMap.from_dense(T)
    placeholder = BipartiteDataset(
        int_ids=ids_int, treated=treated, int_covariate_names=INT_COVARIATES, X_int=X_int,
        out_ids=ids_out, outcome=np.zeros(n), offset=offsets,
        out_covariate_names=OUT_COVARIATES, X_out=X_out, interference=interference,
        schema=schema)
    exposures = derive_exposures(placeholder)
    z, g = exposures.z.astype(float), exposures.g

    xb = X_out @ np.asarray(config.beta_x)
    lin = config.beta_0 + config.beta_z * z + config.beta_g * g + config.beta_zg * z * g + xb
    if config.family == "poisson_offset":
        y = rng.poisson(offsets * np.exp(lin)).astype(float)
        moment = float(np.mean(np.exp(xb)))
    else:
        y = lin + rng.normal(0.0, config.noise_sd, n)
        moment = float(np.mean(xb))
    dataset = BipartiteDataset(
        int_ids=ids_int, treated=treated, int_covariate_names=INT_COVARIATES, X_int=X_int,
        out_ids=ids_out, outcome=y, offset=offsets, out_covariate_names=OUT_COVARIATES,
        X_out=X_out, interference=interference, schema=schema)
    truth = GroundTruth(family=config.family, beta_0=config.beta_0, beta_z=config.beta_z,
                        beta_g=config.beta_g, beta_zg=config.beta_zg,
                        beta_x=tuple(config.beta_x), covariate_moment=moment)
    return dataset, truth


def true_estimands(truth: GroundTruth, g_values, g_grid=None):
    """True curves on the grid and their averages over the observed G values,
    using the same linear interpolation as the estimator."""
    grid = default_grid() if g_grid is None else np.asarray(g_grid, dtype=float)
    g = np.asarray(getattr(g_values, "g", g_values), dtype=float)
    mu = np.vstack([truth.mu(0, grid), truth.mu(1, grid)])
    tau_of_g = mu[1] - mu[0]
    delta = mu - mu[:, :1]
    at_g = np.vstack([np.interp(g, grid, mu[0]), np.interp(g, grid, mu[1])])
    return {
        "g_grid": grid, "mu": mu, "tau_of_g": tau_of_g, "delta": delta,
        "tau": float(np.mean(at_g[1] - at_g[0])),
        "Delta0": float(np.mean(at_g[0] - mu[0, 0])),
        "Delta1": float(np.mean(at_g[1] - mu[1, 0])),
    }
