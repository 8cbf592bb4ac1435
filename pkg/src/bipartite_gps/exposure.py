"""Key-associated unit, key-associated treatment Z and upwind treatment G."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import BipartiteDataset, fmt
from .errors import EmptyRow, OrphanOutcomeUnit


@dataclass(frozen=True, eq=False)
class ExposureTable:
    """Per-outcome-unit derived treatments.

    ``key_index`` indexes interventional units in file order.  ``g_raw`` is the
    influence-weighted count of treated non-key units; ``g`` is ``g_raw``
    divided by its sample maximum (all zero when that maximum is zero).
    """
    out_ids: tuple
    key_index: np.ndarray
    key_ids: tuple
    z: np.ndarray
    g_raw: np.ndarray
    g: np.ndarray

    def __len__(self):
        return len(self.out_ids)

    def equals(self, other):
        return (self.out_ids == other.out_ids and self.key_ids == other.key_ids
                and np.array_equal(self.key_index, other.key_index)
                and np.array_equal(self.z, other.z)
                and np.array_equal(self.g_raw, other.g_raw)
                and np.array_equal(self.g, other.g))

    def write_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["outcome_id", "key_associated_id", "z", "g_raw", "g"])
            for row in zip(self.out_ids, self.key_ids, self.z, self.g_raw, self.g):
                w.writerow([row[0], row[1], int(row[2]), fmt(row[3]), fmt(row[4])])
        return path


def key_associated_unit(cols, weights):
    """Interventional index with the largest weight in one sparse row.

    Ties go to the smallest interventional index.
    """
    cols = np.asarray(cols)
    weights = np.asarray(weights, dtype=float)
    if cols.size == 0:
        raise EmptyRow("interference row has no entries")
    best = weights.max()
    return int(cols[weights == best].min())


def _row_argmax(T):
    """Vectorised first-maximum per CSR row (columns ascending within rows)."""
    lengths = T.row_lengths()
    if (lengths == 0).any():
        raise EmptyRow("interference row has no entries",
                       index=int(np.flatnonzero(lengths == 0)[0]))
    row_max = np.maximum.reduceat(T.weights, T.indptr[:-1])
    is_max = T.weights == row_max[T.rows]
    # first maximal position per row: positions are sorted, so take min position.
    pos = np.where(is_max, np.arange(T.nnz), T.nnz)
    first = np.minimum.reduceat(pos, T.indptr[:-1])
    return T.cols[first]


def _upwind_sum(T, treated, key):
    """Sum of t_ij * S_j over j != key, accumulated in ascending j per row."""
    contrib = T.weights * treated[T.cols]
    contrib[T.cols == key[T.rows]] = 0.0
    acc = np.zeros(T.n_outcome)
    lengths = T.row_lengths()
    for k in range(int(lengths.max()) if lengths.size else 0):
        rows = np.flatnonzero(lengths > k)
        acc[rows] += contrib[T.indptr[rows] + k]
    return acc


def derive_exposures(dataset: BipartiteDataset) -> ExposureTable:
    T = dataset.interference
    treated = dataset.treated.astype(float)
    try:
        key = _row_argmax(T)
    except EmptyRow as exc:
        i = exc.details.get("index", 0)
        raise OrphanOutcomeUnit(f"outcome unit {dataset.out_ids[i]!r} has no interference "
                                "entries", id=dataset.out_ids[i]) from None
    z = dataset.treated[key].astype(np.int8)
    g_raw = _upwind_sum(T, treated, key)
    top = g_raw.max() if g_raw.size else 0.0
    g = g_raw / top if top > 0 else np.zeros_like(g_raw)
    for a in (key, z, g_raw, g):
        a.setflags(write=False)
    return ExposureTable(out_ids=dataset.out_ids, key_index=key,
                         key_ids=tuple(dataset.int_ids[j] for j in key),
                         z=z, g_raw=g_raw, g=g)


def empirical_g_distribution(exposures):
    """Observed G values as (atoms, weights); weights are multiplicities / n."""
    g = np.asarray(exposures.g if hasattr(exposures, "g") else exposures, dtype=float)
    if g.size == 0:
        raise ValueError("empty exposure table")
    atoms, counts = np.unique(g, return_counts=True)
    return atoms, counts / g.size


def filter_eligible(dataset: BipartiteDataset, threshold):
    """Keep outcome units whose total interference weight exceeds ``threshold``."""
    T = dataset.interference
    totals = np.add.reduceat(T.weights, T.indptr[:-1])
    keep = totals > threshold
    return dataset.select_outcome_units(keep), keep


@dataclass(frozen=True, eq=False)
class AnalysisFrame:
    """Fixed node characteristics of each outcome unit, ready for modelling.

    Rows are outcome units; ``out_ids`` is an object array.  ``X_int_key`` holds the covariates of each unit's
    key-associated interventional unit.  Resampling rows (``take``) never
    re-derives exposures.
    """
    out_ids: tuple
    key_index: np.ndarray
    z: np.ndarray
    g: np.ndarray
    y: np.ndarray
    offset: np.ndarray
    X_int_key: np.ndarray
    X_out: np.ndarray
    int_covariate_names: tuple
    out_covariate_names: tuple

    @property
    def n(self):
        return len(self.z)

    def take(self, idx):
        idx = np.asarray(idx)
        return AnalysisFrame(
            out_ids=self.out_ids[idx], key_index=self.key_index[idx],
            z=self.z[idx], g=self.g[idx], y=self.y[idx], offset=self.offset[idx],
            X_int_key=self.X_int_key[idx], X_out=self.X_out[idx],
            int_covariate_names=self.int_covariate_names,
            out_covariate_names=self.out_covariate_names)

    def design(self, names, **values):
        """Design matrix for predictor ``names``.

        ``int.<c>`` is key-unit covariate c, ``out.<c>`` outcome covariate c;
        ``z`` and ``g`` are the exposures and ``z:g`` their product.  Keyword
        ``values`` override or supply columns (scalars broadcast), e.g.
        ``z=1`` for a counterfactual or ``lambda_=...`` for ``lambda``.
        """
        cols = []
        values = {k.rstrip("_"): v for k, v in values.items()}
        for name in names:
            if name in values:
                col = np.broadcast_to(np.asarray(values[name], dtype=float), (self.n,))
            elif name == "z:g":
                z = values.get("z", self.z)
                g = values.get("g", self.g)
                col = np.broadcast_to(np.asarray(z, dtype=float) * np.asarray(g, dtype=float),
                                      (self.n,))
            elif name in ("z", "g"):
                col = getattr(self, name)
            elif name.startswith("int."):
                col = self.X_int_key[:, self.int_covariate_names.index(name[4:])]
            elif name.startswith("out."):
                col = self.X_out[:, self.out_covariate_names.index(name[4:])]
            else:
                raise KeyError(f"unknown design column {name!r}")
            cols.append(col)
        if not cols:
            return np.empty((self.n, 0))
        return np.column_stack(cols)


def analysis_frame(dataset: BipartiteDataset, exposures: ExposureTable) -> AnalysisFrame:
    return AnalysisFrame(
        out_ids=np.asarray(dataset.out_ids, dtype=object),
        key_index=np.asarray(exposures.key_index),
        z=np.asarray(exposures.z, dtype=float), g=np.asarray(exposures.g, dtype=float),
        y=dataset.outcome, offset=dataset.offset,
        X_int_key=dataset.X_int[exposures.key_index], X_out=dataset.X_out,
        int_covariate_names=dataset.int_covariate_names,
        out_covariate_names=dataset.out_covariate_names)
