"""Domain types, dataset container and CSV ingestion for the bipartite problem.

Interventional units carry the binary treatment; outcome units carry the
outcome, a positive person-time offset and their own covariates.  The two
sets are linked by a sparse, strictly positive interference map.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DimensionMismatch,
    MissingColumn,
    NegativeWeight,
    NonBinaryTreatment,
    OrphanOutcomeUnit,
    UnknownCovariate,
    ValidationError,
)

FAMILIES = ("poisson_offset", "normal")
ROLE_NAMES = ("x_int_z", "x_out_z", "x_int_g", "x_out_g", "x_out_outcome")


@dataclass(frozen=True)
class InterventionalUnit:
    id: str
    treated: int
    covariates: tuple

    def __post_init__(self):
        if self.treated not in (0, 1):
            raise NonBinaryTreatment(
                f"interventional unit {self.id!r}: treated must be 0 or 1, got {self.treated!r}",
                id=self.id)


@dataclass(frozen=True)
class OutcomeUnit:
    id: str
    outcome: float
    offset_exposure: float
    covariates: tuple

    def __post_init__(self):
        if not (self.offset_exposure > 0 and math.isfinite(self.offset_exposure)):
            raise ValidationError(
                f"outcome unit {self.id!r}: offset must be positive and finite",
                id=self.id)


@dataclass(frozen=True)
class CovariateSchema:
    """Covariate names per model role, plus the outcome family.

    ``x_int_*`` names refer to interventional covariates, joined to each
    outcome unit through its key-associated unit.  ``x_out_*`` names refer to
    outcome-unit covariates.
    """
    x_int_z: tuple = ()
    x_out_z: tuple = ()
    x_int_g: tuple = ()
    x_out_g: tuple = ()
    x_out_outcome: tuple = ()
    family: str = "poisson_offset"

    def __post_init__(self):
        for role in ROLE_NAMES:
            object.__setattr__(self, role, tuple(getattr(self, role)))
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown outcome family {self.family!r}",
                                  family=self.family)
        for role in ROLE_NAMES:
            names = getattr(self, role)
            if len(set(names)) != len(names):
                raise ValidationError(f"duplicate covariate in role {role}", role=role)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(ROLE_NAMES) - {"family"}
        if unknown:
            raise ValidationError(f"unknown schema keys: {sorted(unknown)}",
                                  keys=sorted(unknown))
        return cls(**{k: tuple(v) if k != "family" else v for k, v in d.items()})

    def to_dict(self):
        out = {role: list(getattr(self, role)) for role in ROLE_NAMES}
        out["family"] = self.family
        return out

    def check_against(self, int_names, out_names):
        for role in ROLE_NAMES:
            declared = int_names if role.startswith("x_int") else out_names
            for name in getattr(self, role):
                if name not in declared:
                    raise UnknownCovariate(
                        f"schema role {role} references unknown covariate {name!r}",
                        role=role, covariate=name)


class InterferenceMap:
    """Sparse N x J map of strictly positive influence weights.

    Stored row-major (CSR) with columns ascending inside each row, so every
    per-row reduction runs in ascending interventional index.
    """

    def __init__(self, n_outcome, n_interventional, rows, cols, weights):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        weights = np.asarray(weights, dtype=float)
        if not (rows.shape == cols.shape == weights.shape) or rows.ndim != 1:
            raise DimensionMismatch("triplet arrays must be 1-d and of equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_outcome
                          or cols.min() < 0 or cols.max() >= n_interventional):
            raise DimensionMismatch("triplet index out of range",
                                    n_outcome=n_outcome, n_interventional=n_interventional)
        bad = ~(np.isfinite(weights) & (weights > 0))
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise NegativeWeight(
                f"weight at (outcome {rows[k]}, interventional {cols[k]}) must be "
                f"positive and finite, got {weights[k]!r}",
                outcome_index=int(rows[k]), interventional_index=int(cols[k]))
        order = np.lexsort((cols, rows))
        rows, cols, weights = rows[order], cols[order], weights[order]
        dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            raise ValidationError(
                f"duplicate interference entry (outcome {rows[k]}, interventional {cols[k]})",
                outcome_index=int(rows[k]), interventional_index=int(cols[k]))
        self.n_outcome = int(n_outcome)
        self.n_interventional = int(n_interventional)
        self.rows, self.cols, self.weights = rows, cols, weights
        self.indptr = np.searchsorted(rows, np.arange(n_outcome + 1), side="left")
        for a in (self.rows, self.cols, self.weights, self.indptr):
            a.setflags(write=False)

    @property
    def nnz(self):
        return int(self.weights.size)

    @property
    def shape(self):
        return (self.n_outcome, self.n_interventional)

    def row_lengths(self):
        return np.diff(self.indptr)

    def row(self, i):
        """Return (interventional indices, weights) of outcome unit ``i``."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.cols[lo:hi], self.weights[lo:hi]

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.weights
        return out

    @classmethod
    def from_dense(cls, matrix):
        matrix = np.asarray(matrix, dtype=float)
        rows, cols = np.nonzero(matrix)
        return cls(matrix.shape[0], matrix.shape[1], rows, cols, matrix[rows, cols])

    def scaled(self, c):
        return InterferenceMap(self.n_outcome, self.n_interventional,
                               self.rows, self.cols, self.weights * c)

    def select_rows(self, keep):
        """Map restricted to the outcome units flagged in boolean ``keep``."""
        keep = np.asarray(keep, dtype=bool)
        new_index = np.cumsum(keep) - 1
        mask = keep[self.rows]
        return InterferenceMap(int(keep.sum()), self.n_interventional,
                               new_index[self.rows[mask]], self.cols[mask],
                               self.weights[mask])

    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.weights.tolist()))

    def __eq__(self, other):
        return (isinstance(other, InterferenceMap) and self.shape == other.shape
                and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.weights, other.weights))

    def __repr__(self):
        return f"InterferenceMap(shape={self.shape}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class BipartiteDataset:
    """Immutable container for both unit sets and the interference map.

    Units are stored column-wise; internal indices follow file order.
    """
    int_ids: tuple
    treated: np.ndarray
    int_covariate_names: tuple
    X_int: np.ndarray
    out_ids: tuple
    outcome: np.ndarray
    offset: np.ndarray
    out_covariate_names: tuple
    X_out: np.ndarray
    interference: InterferenceMap
    schema: CovariateSchema = field(default_factory=CovariateSchema)

    def __post_init__(self):
        J, n = len(self.int_ids), len(self.out_ids)
        for name in ("treated", "X_int", "outcome", "offset", "X_out"):
            arr = np.array(getattr(self, name), dtype=np.int8 if name == "treated" else float)
            if name.startswith("X_") and arr.ndim == 1:
                arr = arr.reshape(len(arr), -1) if arr.size else arr.reshape(
                    J if name == "X_int" else n, 0)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.interference.shape != (n, J):
            raise DimensionMismatch(
                f"interference shape {self.interference.shape} does not match "
                f"({n} outcome units, {J} interventional units)")
        if self.treated.shape != (J,) or self.X_int.shape != (J, len(self.int_covariate_names)):
            raise DimensionMismatch("interventional arrays inconsistent with id list")
        if (self.outcome.shape != (n,) or self.offset.shape != (n,)
                or self.X_out.shape != (n, len(self.out_covariate_names))):
            raise DimensionMismatch("outcome arrays inconsistent with id list")
        if len(set(self.int_ids)) != J:
            raise ValidationError("duplicate interventional id")
        if len(set(self.out_ids)) != n:
            raise ValidationError("duplicate outcome id")
        if not np.isin(self.treated, (0, 1)).all():
            j = int(np.flatnonzero(~np.isin(self.treated, (0, 1)))[0])
            raise NonBinaryTreatment(f"interventional unit {self.int_ids[j]!r} is not 0/1",
                                     id=self.int_ids[j])
        bad = ~(np.isfinite(self.offset) & (self.offset > 0))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"outcome unit {self.out_ids[i]!r}: offset must be > 0",
                                  id=self.out_ids[i])
        if not np.isfinite(self.outcome).all():
            raise ValidationError("non-finite outcome")
        if self.schema.family == "poisson_offset" and (self.outcome < 0).any():
            i = int(np.flatnonzero(self.outcome < 0)[0])
            raise ValidationError(
                f"outcome unit {self.out_ids[i]!r}: negative outcome under Poisson family",
                id=self.out_ids[i])
        if not (np.isfinite(self.X_int).all() and np.isfinite(self.X_out).all()):
            raise ValidationError("non-finite covariate value")
        empty = np.flatnonzero(self.interference.row_lengths() == 0)
        if empty.size:
            raise OrphanOutcomeUnit(
                f"outcome unit {self.out_ids[empty[0]]!r} has no interference entries",
                id=self.out_ids[empty[0]])
        self.schema.check_against(self.int_covariate_names, self.out_covariate_names)

    @property
    def n_outcome(self):
        return len(self.out_ids)

    @property
    def n_interventional(self):
        return len(self.int_ids)

    @property
    def interventional_units(self) -> List[InterventionalUnit]:
        return [InterventionalUnit(i, int(s), tuple(x.tolist()))
                for i, s, x in zip(self.int_ids, self.treated, self.X_int)]

    @property
    def outcome_units(self) -> List[OutcomeUnit]:
        return [OutcomeUnit(i, float(y), float(b), tuple(x.tolist()))
                for i, y, b, x in zip(self.out_ids, self.outcome, self.offset, self.X_out)]

    def int_columns(self, names):
        idx = [self.int_covariate_names.index(n) for n in names]
        return self.X_int[:, idx]

    def out_columns(self, names):
        idx = [self.out_covariate_names.index(n) for n in names]
        return self.X_out[:, idx]

    def with_treatment(self, treated):
        return _replace(self, treated=np.asarray(treated))

    def with_interference(self, interference):
        return _replace(self, interference=interference)

    def with_schema(self, schema):
        return _replace(self, schema=schema)

    def select_outcome_units(self, keep):
        keep = np.asarray(keep, dtype=bool)
        return _replace(
            self,
            out_ids=tuple(i for i, k in zip(self.out_ids, keep) if k),
            outcome=self.outcome[keep], offset=self.offset[keep], X_out=self.X_out[keep],
            interference=self.interference.select_rows(keep))

    def equals(self, other):
        """Id-for-id, bit-equal comparison."""
        return (self.int_ids == other.int_ids and self.out_ids == other.out_ids
                and self.int_covariate_names == other.int_covariate_names
                and self.out_covariate_names == other.out_covariate_names
                and np.array_equal(self.treated, other.treated)
                and np.array_equal(self.X_int, other.X_int)
                and np.array_equal(self.outcome, other.outcome)
                and np.array_equal(self.offset, other.offset)
                and np.array_equal(self.X_out, other.X_out)
                and self.interference == other.interference
                and self.schema == other.schema)


def _replace(ds, **changes):
    kw = {f: getattr(ds, f) for f in ds.__dataclass_fields__}
    kw.update(changes)
    return BipartiteDataset(**kw)


def from_units(interventional_units: Sequence[InterventionalUnit],
               outcome_units: Sequence[OutcomeUnit],
               interference: InterferenceMap,
               int_covariate_names=(), out_covariate_names=(),
               schema: Optional[CovariateSchema] = None) -> BipartiteDataset:
    for u in interventional_units:
        if len(u.covariates) != len(int_covariate_names):
            raise DimensionMismatch(f"interventional unit {u.id!r}: covariate length", id=u.id)
    for u in outcome_units:
        if len(u.covariates) != len(out_covariate_names):
            raise DimensionMismatch(f"outcome unit {u.id!r}: covariate length", id=u.id)
    J, n = len(interventional_units), len(outcome_units)
    return BipartiteDataset(
        int_ids=tuple(u.id for u in interventional_units),
        treated=np.array([u.treated for u in interventional_units], dtype=np.int8),
        int_covariate_names=tuple(int_covariate_names),
        X_int=np.array([u.covariates for u in interventional_units], dtype=float).reshape(
            J, len(int_covariate_names)),
        out_ids=tuple(u.id for u in outcome_units),
        outcome=np.array([u.outcome for u in outcome_units], dtype=float),
        offset=np.array([u.offset_exposure for u in outcome_units], dtype=float),
        out_covariate_names=tuple(out_covariate_names),
        X_out=np.array([u.covariates for u in outcome_units], dtype=float).reshape(
            n, len(out_covariate_names)),
        interference=interference,
        schema=schema or CovariateSchema())


# --- CSV ingestion -------------------------------------------------------

def _read_csv(path, required):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path.name}: empty file", file=str(path)) from None
        rows = [r for r in reader if r]
    for col in required:
        if col not in header:
            raise MissingColumn(f"{path.name}: missing column {col!r}",
                                file=str(path), column=col)
    if len(set(header)) != len(header):
        raise ValidationError(f"{path.name}: duplicate column names", file=str(path))
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DimensionMismatch(f"{path.name}:{lineno}: expected {len(header)} fields",
                                    file=str(path), line=lineno)
    return header, rows


def _to_float(text, where):
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{where}: not a number: {text!r}") from None


def load_dataset(interventional_path, outcome_path, interference_path,
                 schema=None) -> BipartiteDataset:
    """Read the three CSV files and return a fully validated dataset."""
    if isinstance(schema, dict):
        schema = CovariateSchema.from_dict(schema)
    schema = schema or CovariateSchema()

    header, rows = _read_csv(interventional_path, ("id", "treated"))
    int_cov = tuple(h for h in header if h not in ("id", "treated"))
    cov_pos = [header.index(c) for c in int_cov]
    int_ids, treated, X_int = [], [], []
    for r in rows:
        uid = r[header.index("id")].strip()
        s = _to_float(r[header.index("treated")], f"interventional {uid!r} treated")
        if s not in (0.0, 1.0):
            raise NonBinaryTreatment(f"interventional unit {uid!r}: treated={r[header.index('treated')]!r} is not 0/1",
                                     id=uid)
        int_ids.append(uid)
        treated.append(int(s))
        X_int.append([_to_float(r[p], f"interventional {uid!r}") for p in cov_pos])

    header, rows = _read_csv(outcome_path, ("id", "outcome", "offset"))
    out_cov = tuple(h for h in header if h not in ("id", "outcome", "offset"))
    cov_pos = [header.index(c) for c in out_cov]
    out_ids, outcome, offset, X_out = [], [], [], []
    for r in rows:
        uid = r[header.index("id")].strip()
        out_ids.append(uid)
        outcome.append(_to_float(r[header.index("outcome")], f"outcome {uid!r}"))
        offset.append(_to_float(r[header.index("offset")], f"outcome {uid!r} offset"))
        X_out.append([_to_float(r[p], f"outcome {uid!r}") for p in cov_pos])

    int_index = _index(int_ids, "interventional")
    out_index = _index(out_ids, "outcome")

    header, rows = _read_csv(interference_path, ("outcome_id", "interventional_id", "weight"))
    ti, tj, tw = [], [], []
    po, pj, pw = (header.index(c) for c in ("outcome_id", "interventional_id", "weight"))
    for lineno, r in enumerate(rows, start=2):
        oid, jid = r[po].strip(), r[pj].strip()
        if oid not in out_index:
            raise DimensionMismatch(f"interference line {lineno}: unknown outcome id {oid!r}",
                                    id=oid, line=lineno)
        if jid not in int_index:
            raise DimensionMismatch(
                f"interference line {lineno}: unknown interventional id {jid!r}",
                id=jid, line=lineno)
        w = _to_float(r[pw], f"interference line {lineno}")
        if not (w > 0 and math.isfinite(w)):
            raise NegativeWeight(
                f"interference line {lineno}: weight {r[pw]!r} for ({oid!r}, {jid!r}) "
                "must be positive", outcome_id=oid, interventional_id=jid, line=lineno)
        ti.append(out_index[oid])
        tj.append(int_index[jid])
        tw.append(w)

    J, n = len(int_ids), len(out_ids)
    interference = InterferenceMap(n, J, ti, tj, tw)
    return BipartiteDataset(
        int_ids=tuple(int_ids), treated=np.array(treated, dtype=np.int8),
        int_covariate_names=int_cov, X_int=np.array(X_int, dtype=float).reshape(J, len(int_cov)),
        out_ids=tuple(out_ids), outcome=np.array(outcome), offset=np.array(offset),
        out_covariate_names=out_cov,
        X_out=np.array(X_out, dtype=float).reshape(n, len(out_cov)),
        interference=interference, schema=schema)


def _index(ids, what) -> Dict[str, int]:
    index = {}
    for k, uid in enumerate(ids):
        if uid in index:
            raise ValidationError(f"duplicate {what} id {uid!r}", id=uid)
        index[uid] = k
    return index


def fmt(x):
    """Shortest repr that round-trips a float exactly."""
    return repr(float(x))


def write_dataset(dataset: BipartiteDataset, directory, schema_file=True):
    """Write the dataset as interventional.csv, outcome.csv, interference.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {name: directory / f"{name}.csv"
             for name in ("interventional", "outcome", "interference")}
    with paths["interventional"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "treated", *dataset.int_covariate_names])
        for uid, s, x in zip(dataset.int_ids, dataset.treated, dataset.X_int):
            w.writerow([uid, int(s), *map(fmt, x)])
    with paths["outcome"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "outcome", "offset", *dataset.out_covariate_names])
        for uid, y, b, x in zip(dataset.out_ids, dataset.outcome, dataset.offset, dataset.X_out):
            w.writerow([uid, fmt(y), fmt(b), *map(fmt, x)])
    T = dataset.interference
    with paths["interference"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outcome_id", "interventional_id", "weight"])
        for i, j, t in zip(T.rows, T.cols, T.weights):
            w.writerow([dataset.out_ids[i], dataset.int_ids[j], fmt(t)])
    if schema_file:
        paths["schema"] = directory / "schema.json"
        paths["schema"].write_text(json.dumps(dataset.schema.to_dict(), indent=2) + "\n")
    return paths


def summarize_by_treatment(dataset: BipartiteDataset, exposures) -> pd.DataFrame:
    """Covariate means by level of the key-associated treatment.

    Rows: G, then outcome-unit covariates (prefixed ``out.``), then the covariates of each unit's
    key-associated interventional unit (prefixed ``int.``).  A group with no
    members yields NaN means and ``empty`` set in the ``flag`` column.
    """
    z = np.asarray(exposures.z)
    columns = [("G", np.asarray(exposures.g))]
    columns += [(f"out.{name}", dataset.X_out[:, k]) for k, name in enumerate(dataset.out_covariate_names)]
    X_key = dataset.X_int[np.asarray(exposures.key_index)]
    columns += [(f"int.{name}", X_key[:, k])
                for k, name in enumerate(dataset.int_covariate_names)]
    n0, n1 = int((z == 0).sum()), int((z == 1).sum())
    flag = ";".join(f"Z={lvl} empty" for lvl, cnt in ((0, n0), (1, n1)) if cnt == 0)
    records = []
    for name, values in columns:
        records.append({
            "covariate": name,
            "mean_z0": float(values[z == 0].mean()) if n0 else float("nan"),
            "mean_z1": float(values[z == 1].mean()) if n1 else float("nan"),
            "n_z0": n0, "n_z1": n1, "flag": flag,
        })
    return pd.DataFrame.from_records(records)
