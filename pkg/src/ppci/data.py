"""CSV ingestion, standardization, and sampling pools for real-data experiments."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .estimators import LabeledSample, UnlabeledSample

__all__ = [
    "DatasetError",
    "DatasetSchema",
    "StandardizationParams",
    "load_covariates",
    "load_dataset",
    "sample_pools",
    "save_dataset",
    "standardize",
]


class DatasetError(ValueError):
    """Malformed or incomplete input data."""


@dataclass(frozen=True)
class DatasetSchema:
    covariate_columns: tuple
    response_column: str | None = None
    prediction_column: str | None = None
    delimiter: str = ","

    def __post_init__(self):
        cols = tuple(self.covariate_columns)
        object.__setattr__(self, "covariate_columns", cols)
        if not cols:
            raise ValueError("schema needs at least one covariate column")
        names = [c for c in (*cols, self.response_column, self.prediction_column) if c is not None]
        if len(set(names)) != len(names):
            raise ValueError(f"schema column names must be distinct: {names}")


def _read_columns(path, columns: list, delimiter: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: file is empty") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in columns]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not v.strip() for v in rec):
                continue
            vals = []
            for c, j in zip(columns, idx):
                try:
                    v = float(rec[j])
                except (IndexError, ValueError):
                    raise DatasetError(f"{path}: row {lineno}, column {c!r}: cannot parse value") from None
                if not np.isfinite(v):
                    raise DatasetError(f"{path}: row {lineno}, column {c!r}: non-finite value {rec[j]!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def load_covariates(path, columns, delimiter: str = ",") -> np.ndarray:
    """Read only the named covariate columns."""
    return _read_columns(path, list(columns), delimiter)


def load_dataset(path, schema: DatasetSchema, role: str = "labeled", predictions=None):
    """Read a headered UTF-8 CSV into a labeled or unlabeled sample.

    ``predictions`` (an array) replaces the prediction column; it is how an
    unlabeled file without predictions gets paired with a separate predictor
    output. For the labeled role without any prediction source, predictions
    are filled with zeros (enough for labeled-only inference).

    Rows are kept in file order. Line numbers in error messages count the
    header as line 1.
    """
    if role not in ("labeled", "unlabeled"):
        raise ValueError(f"role must be 'labeled' or 'unlabeled', got {role!r}")
    wanted = list(schema.covariate_columns)
    if role == "labeled":
        if schema.response_column is None:
            raise DatasetError("labeled data needs a response column in the schema")
        wanted.append(schema.response_column)
    use_pred = predictions is None and schema.prediction_column is not None
    if use_pred:
        wanted.append(schema.prediction_column)
    elif predictions is None and role == "unlabeled":
        raise DatasetError(f"{path}: unlabeled data needs a prediction column or a predictions array")
    arr = _read_columns(path, wanted, schema.delimiter)
    d = len(schema.covariate_columns)
    x = arr[:, :d]
    if predictions is not None:
        f = np.asarray(predictions, dtype=float).reshape(-1)
        if f.size != x.shape[0]:
            raise DatasetError(f"{path}: {x.shape[0]} rows but {f.size} predictions supplied")
    elif use_pred:
        f = arr[:, -1]
    else:
        f = np.zeros(x.shape[0])
    if role == "labeled":
        return LabeledSample(x, arr[:, d], f)
    return UnlabeledSample(x, f)


def save_dataset(path, sample, schema: DatasetSchema) -> None:
    """Write a sample back out in the layout :func:`load_dataset` reads."""
    cols = list(schema.covariate_columns)
    data = [sample.covariates]
    if isinstance(sample, LabeledSample):
        cols.append(schema.response_column)
        data.append(sample.y[:, None])
    if schema.prediction_column is not None:
        cols.append(schema.prediction_column)
        data.append(sample.f[:, None])
    arr = np.hstack(data)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=schema.delimiter)
        writer.writerow(cols)
        for row in arr:
            writer.writerow([repr(float(v)) for v in row])


@dataclass
class StandardizationParams:
    mean: np.ndarray
    sd: np.ndarray
    constant: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.sd = np.asarray(self.sd, dtype=float)
        if self.constant is None:
            self.constant = ~(self.sd > 0)
        self.constant = np.asarray(self.constant, dtype=bool)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = x.copy()
        keep = ~self.constant
        out[..., keep] = (x[..., keep] - self.mean[keep]) / self.sd[keep]
        return out

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "sd": self.sd.tolist(), "constant": self.constant.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "StandardizationParams":
        d = json.loads(text)
        return cls(np.array(d["mean"]), np.array(d["sd"]), np.array(d["constant"], dtype=bool))


def standardize(x, params: StandardizationParams | None = None):
    """Zero-mean, unit-variance columns (ddof 1); constant columns pass through.

    Pass ``params`` from a previous call to transform test points the same way.
    """
    x = np.asarray(x, dtype=float)
    if params is None:
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("standardization needs a 2-D array with at least 2 rows")
        params = StandardizationParams(x.mean(axis=0), x.std(axis=0, ddof=1))
    return params.apply(x), params


def sample_pools(data: LabeledSample, x0, n: int, N: int, exclude_duplicates: bool = True, seed: int = 0):
    """Disjoint labeled / unlabeled draws without replacement from one pool.

    With ``exclude_duplicates``, rows whose covariate vector equals ``x0``
    exactly are removed first. The unlabeled draw keeps predictions only.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    keep = np.arange(data.n)
    if exclude_duplicates:
        keep = keep[~np.all(data.covariates == x0, axis=1)]
    if keep.size < n + N:
        raise DatasetError(f"pool has {keep.size} rows after exclusion, need n + N = {n + N}")
    rng = np.random.default_rng(seed)
    pick = rng.choice(keep, size=n + N, replace=False)
    lab_idx, unl_idx = pick[:n], pick[n:]
    lab = LabeledSample(data.covariates[lab_idx], data.y[lab_idx], data.f[lab_idx])
    unl = UnlabeledSample(data.covariates[unl_idx], data.f[unl_idx])
    return lab, unl
