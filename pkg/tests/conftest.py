import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bipartite_gps.data_model import BipartiteDataset, CovariateSchema, InterferenceMap  # noqa: E402
from bipartite_gps.exposure import analysis_frame, derive_exposures  # noqa: E402
from bipartite_gps.synth import SynthConfig, generate  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_dataset(T, treated, X_int=None, X_out=None, y=None, offset=None,
                 int_names=None, out_names=None, schema=None):
    """Dataset from a dense interference matrix with generated ids."""
    T = np.asarray(T, dtype=float)
    n, J = T.shape
    X_int = np.zeros((J, 0)) if X_int is None else np.asarray(X_int, dtype=float).reshape(J, -1)
    X_out = np.zeros((n, 0)) if X_out is None else np.asarray(X_out, dtype=float).reshape(n, -1)
    int_names = int_names or tuple(f"c{k}" for k in range(X_int.shape[1]))
    out_names = out_names or tuple(f"x{k}" for k in range(X_out.shape[1]))
    return BipartiteDataset(
        int_ids=tuple(f"P{j}" for j in range(J)), treated=np.asarray(treated),
        int_covariate_names=tuple(int_names), X_int=X_int,
        out_ids=tuple(f"R{i}" for i in range(n)),
        outcome=np.zeros(n) if y is None else np.asarray(y, dtype=float),
        offset=np.ones(n) if offset is None else np.asarray(offset, dtype=float),
        out_covariate_names=tuple(out_names), X_out=X_out,
        interference=InterferenceMap.from_dense(T),
        schema=schema or CovariateSchema())


@pytest.fixture(scope="session")
def synth_small():
    ds, truth = generate(SynthConfig(n_outcome=800, seed=5))
    ex = derive_exposures(ds)
    return ds, truth, ex, analysis_frame(ds, ex)


def make_frame(z, g, X_out=None, X_int_key=None, y=None, offset=None,
               out_names=None, int_names=None):
    """AnalysisFrame straight from per-unit arrays."""
    from bipartite_gps.exposure import AnalysisFrame
    z = np.asarray(z, dtype=float)
    n = z.size
    X_out = np.zeros((n, 0)) if X_out is None else np.asarray(X_out, dtype=float).reshape(n, -1)
    X_int_key = (np.zeros((n, 0)) if X_int_key is None
                 else np.asarray(X_int_key, dtype=float).reshape(n, -1))
    return AnalysisFrame(
        out_ids=np.array([f"R{i}" for i in range(n)], dtype=object),
        key_index=np.zeros(n, dtype=int), z=z, g=np.asarray(g, dtype=float),
        y=np.zeros(n) if y is None else np.asarray(y, dtype=float),
        offset=np.ones(n) if offset is None else np.asarray(offset, dtype=float),
        X_int_key=X_int_key, X_out=X_out,
        int_covariate_names=tuple(int_names or (f"c{k}" for k in range(X_int_key.shape[1]))),
        out_covariate_names=tuple(out_names or (f"x{k}" for k in range(X_out.shape[1]))))
