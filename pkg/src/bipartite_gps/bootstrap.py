"""Egocentric bootstrap over outcome units with percentile intervals.

Each replicate resamples rows of an :class:`AnalysisFrame` with replacement.
Rows carry their exposures and covariates unchanged; nothing is re-derived
from the network.  Replicate ``r`` draws from ``default_rng([seed, r])`` so
serial and parallel runs give identical results.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BipartiteError, TooManyFailures
from .propensity import quantile

log = logging.getLogger(__name__)

CAVEAT = ("Intervals come from an egocentric bootstrap that holds each outcome "
          "unit's key-associated unit, Z, G and covariates fixed. They are only as "
          "valid as that sampling model is for the data at hand.")


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 500
    seed: int = 0
    ci_level: float = 0.95
    jobs: int = 1
    max_failure_fraction: float = 0.2

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least 2 bootstrap replicates")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    point: dict
    lower: dict
    upper: dict
    sd: dict
    n_replicates: int
    n_failed: int
    ci_level: float
    failures: tuple = ()
    replicates: dict = field(default_factory=dict, repr=False)

    def interval(self, name):
        return float(self.lower[name][0]), float(self.upper[name][0])

    def to_dict(self, names=("tau", "Delta0", "Delta1")):
        out = {}
        for name in names:
            out[name] = {
                "estimate": float(self.point[name][0]),
                "lower": float(self.lower[name][0]),
                "upper": float(self.upper[name][0]),
                "sd": float(self.sd[name][0]),
            }
        out["ci_level"] = self.ci_level
        out["replicates"] = self.n_replicates
        out["n_failed"] = self.n_failed
        out["failures"] = [{"replicate": r, "code": c, "message": m}
                           for r, c, m in self.failures]
        out["caveat"] = CAVEAT
        return out


def replicate_indices(n, seed, r):
    return np.random.default_rng([seed, r]).integers(0, n, size=n)


def percentile_interval(values, level):
    """Midpoint-interpolated percentile interval along axis 0."""
    # round away representation error, e.g. (1 - 0.9) / 2 = 0.04999...
    a = round((1.0 - level) / 2.0, 12)
    return quantile(values, a, axis=0), quantile(values, 1.0 - a, axis=0)


def _run_one(frame, statistic, seed, r):
    idx = replicate_indices(frame.n, seed, r)
    try:
        return r, statistic(frame.take(idx)), None
    except (BipartiteError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        return r, None, (getattr(exc, "code", type(exc).__name__), str(exc))


_WORKER = {}


def _init_worker(frame, statistic):
    _WORKER["frame"], _WORKER["statistic"] = frame, statistic


def _run_chunk(seed, rs):
    return [_run_one(_WORKER["frame"], _WORKER["statistic"], seed, r) for r in rs]


def egocentric_bootstrap(frame, config: BootstrapConfig, statistic, point=None):
    """Bootstrap ``statistic`` (frame -> dict of 1-d arrays) over outcome units.

    ``point`` is the statistic on the full frame; computed when not given.
    Failed replicates are logged and excluded.
    """
    if point is None:
        point = statistic(frame)
    B = config.replicates
    if config.jobs > 1:
        chunks = [list(range(B))[i::config.jobs * 4] for i in range(config.jobs * 4)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=config.jobs, initializer=_init_worker,
                                 initargs=(frame, statistic)) as pool:
            parts = pool.map(_run_chunk, [config.seed] * len(chunks), chunks)
            results = sorted((res for part in parts for res in part), key=lambda t: t[0])
    else:
        results = [_run_one(frame, statistic, config.seed, r) for r in range(B)]

    failures = tuple((r, err[0], err[1]) for r, _, err in results if err is not None)
    for r, code, msg in failures:
        log.info("bootstrap replicate %d failed (%s): %s", r, code, msg)
    n_failed = len(failures)
    if n_failed / B > config.max_failure_fraction:
        raise TooManyFailures(f"{n_failed} of {B} bootstrap replicates failed",
                              n_failed=n_failed, replicates=B)
    ok = [stat for _, stat, err in results if err is None]
    stacked = {name: np.vstack([np.atleast_1d(s[name]) for s in ok]) for name in point}
    lower, upper, sd = {}, {}, {}
    for name, values in stacked.items():
        lower[name], upper[name] = percentile_interval(values, config.ci_level)
        sd[name] = values.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(values.shape[1])
    point = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in point.items()}
    return BootstrapResult(point=point, lower=lower, upper=upper, sd=sd, n_replicates=B,
                           n_failed=n_failed, ci_level=config.ci_level, failures=failures,
                           replicates=stacked)
