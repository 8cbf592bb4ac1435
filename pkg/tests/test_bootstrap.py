import functools

import numpy as np
import pytest

from bipartite_gps.bootstrap import (
    BootstrapConfig,
    egocentric_bootstrap,
    percentile_interval,
    replicate_indices,
)
from bipartite_gps.effects import EstimationConfig, pipeline_statistics
from bipartite_gps.errors import EmptyAfterTrim, TooManyFailures
from conftest import make_frame


def mean_stat(frame):
    return {"mean_y": np.array([frame.y.mean()]), "mean_g": np.array([frame.g.mean()])}


def test_single_unit_replicates_are_the_original():
    frame = make_frame([1.0], [0.4], y=[7.0])
    res = egocentric_bootstrap(frame, BootstrapConfig(replicates=2, seed=3), mean_stat)
    assert res.replicates["mean_y"].ravel().tolist() == [7.0, 7.0]
    assert res.interval("mean_y") == (7.0, 7.0)


def test_constant_statistic():
    frame = make_frame(np.ones(20), np.linspace(0, 1, 20))
    const = lambda f: {"c": np.array([2.5])}
    res = egocentric_bootstrap(frame, BootstrapConfig(replicates=50), const)
    assert res.interval("c") == (2.5, 2.5)


def test_percentile_rule():
    lo, hi = percentile_interval(np.arange(1.0, 101.0)[:, None], 0.90)
    assert (lo[0], hi[0]) == (5.5, 95.5)


def test_fixed_node_contract():
    rng = np.random.default_rng(0)
    n = 50
    frame = make_frame(rng.integers(0, 2, n), rng.uniform(size=n), X_out=rng.normal(size=(n, 2)),
                       y=rng.poisson(3, n))
    seen = []

    def record(sub):
        seen.append(sub)
        return {"n": np.array([sub.n])}

    egocentric_bootstrap(frame, BootstrapConfig(replicates=5, seed=9), record, point={"n": [n]})
    for sub in seen:
        pos = np.array([int(i[1:]) for i in sub.out_ids])
        np.testing.assert_array_equal(sub.z, frame.z[pos])
        np.testing.assert_array_equal(sub.g, frame.g[pos])
        np.testing.assert_array_equal(sub.X_out, frame.X_out[pos])
        np.testing.assert_array_equal(sub.y, frame.y[pos])


def test_streams_are_per_replicate():
    a = replicate_indices(100, 7, 3)
    np.testing.assert_array_equal(a, replicate_indices(100, 7, 3))
    assert not np.array_equal(a, replicate_indices(100, 7, 4))


def test_serial_and_parallel_identical(synth_small):
    ds, _, _, frame = synth_small
    stat = functools.partial(pipeline_statistics, schema=ds.schema, config=EstimationConfig())
    a = egocentric_bootstrap(frame, BootstrapConfig(replicates=12, seed=42, jobs=1), stat)
    b = egocentric_bootstrap(frame, BootstrapConfig(replicates=12, seed=42, jobs=3), stat)
    for name in a.replicates:
        np.testing.assert_array_equal(a.replicates[name], b.replicates[name])
        np.testing.assert_array_equal(a.lower[name], b.lower[name])
    assert a.to_dict() == b.to_dict()
    assert (a.lower["tau_of_g"] <= a.upper["tau_of_g"]).all()


def test_failures_logged_and_excluded():
    frame = make_frame(np.ones(30), np.linspace(0, 1, 30), y=np.arange(30.0))

    def flaky(sub):
        if sub.y.sum() % 3 == 0:
            raise EmptyAfterTrim("no overlap")
        return {"s": np.array([sub.y.sum()])}

    res = egocentric_bootstrap(frame, BootstrapConfig(replicates=40, seed=1,
                                                      max_failure_fraction=1.0), flaky,
                               point={"s": [435.0]})
    assert res.n_failed == len(res.failures) > 0
    assert res.replicates["s"].shape[0] == 40 - res.n_failed
    assert all(code == "propensity.empty_after_trim" for _, code, _ in res.failures)
    with pytest.raises(TooManyFailures):
        egocentric_bootstrap(frame, BootstrapConfig(replicates=40, seed=1), flaky,
                             point={"s": [435.0]})


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(replicates=1)
    with pytest.raises(ValueError):
        BootstrapConfig(ci_level=1.0)
