"""Dataset container, CSV ingestion, and seeded splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .encoder import CONTINUOUS, SPARSE, FeatureSchema, FeatureSpec, SchemaError, build_schema

CRITEO_FEATURES = [f"f{i}" for i in range(12)]
CRITEO_COLUMNS = CRITEO_FEATURES + ["treatment", "conversion", "visit", "exposure"]


@dataclass(frozen=True)
class Instance:
    """One marketing record: non-treatment features, treatment features, response."""

    x: np.ndarray
    t: np.ndarray
    y: float


@dataclass
class Dataset:
    """Immutable rows conforming to a schema; X/T hold raw (unnormalized) values."""

    schema: FeatureSchema
    X: np.ndarray
    T: np.ndarray
    y: np.ndarray
    provenance: str = ""
    skipped_lines: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        n = len(self.y)
        if n == 0:
            raise ValueError("dataset is empty")
        if self.X.shape != (n, self.schema.d_x) or self.T.shape != (n, self.schema.d_t):
            raise SchemaError(
                f"rows do not conform to schema: X {self.X.shape}, T {self.T.shape}, "
                f"expected ({n}, {self.schema.d_x}) and ({n}, {self.schema.d_t})"
            )

    def __len__(self) -> int:
        return len(self.y)

    def instance(self, i: int) -> Instance:
        return Instance(self.X[i].copy(), self.T[i].copy(), float(self.y[i]))

    def treatment_index(self) -> np.ndarray:
        return self.schema.treatment_indices(self.T)

    def treatment_descriptors(self) -> np.ndarray:
        """Per-group mean treatment-feature rows, shape [K+1, d_t].

        Groups absent from the data fall back to (index, 0, ...).
        """
        k_total = self.schema.n_treatments + 1
        idx = self.treatment_index()
        out = np.zeros((k_total, self.schema.d_t))
        out[:, 0] = np.arange(k_total)
        for k in range(k_total):
            rows = self.T[idx == k]
            if len(rows):
                out[k] = rows.mean(axis=0)
                out[k, 0] = k
        return out

    def take(self, indices: np.ndarray, provenance: str | None = None) -> "Dataset":
        return Dataset(self.schema, self.X[indices], self.T[indices], self.y[indices],
                       provenance if provenance is not None else self.provenance)


def split(dataset: Dataset, ratio: float, seed: int, stratify_by_treatment: bool = False):
    """Seeded uniform shuffle then prefix split into (train, test).

    With ``stratify_by_treatment`` the split is applied per treatment group,
    useful on tiny subsamples where group imbalance bites.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(dataset)
    rng = np.random.default_rng(seed)
    if stratify_by_treatment:
        idx = dataset.treatment_index()
        first, second = [], []
        for k in np.unique(idx):
            members = np.flatnonzero(idx == k)
            members = members[rng.permutation(len(members))]
            cut = int(round(ratio * len(members)))
            first.append(members[:cut])
            second.append(members[cut:])
        left = np.concatenate(first)
        right = np.concatenate(second)
    else:
        perm = rng.permutation(n)
        cut = int(round(ratio * n))
        left, right = perm[:cut], perm[cut:]
    if len(left) == 0 or len(right) == 0:
        raise ValueError(f"split ratio {ratio} leaves one side empty for n={n}")
    tag = dataset.provenance
    return dataset.take(left, f"{tag}[train]"), dataset.take(right, f"{tag}[test]")


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Seeded uniform subsample keeping a ``fraction`` of the rows."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(dataset)
    keep = max(1, int(round(fraction * n)))
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)[:keep]
    return dataset.take(idx, f"{dataset.provenance}[sub {fraction}]")


def load_criteo(path, target: str = "visit") -> Dataset:
    """Load a CRITEO-UPLIFT CSV: 12 continuous features, binary treatment.

    ``target`` picks the response column (visit or conversion); the exposure
    column is ignored. Malformed rows are skipped and surfaced via
    ``Dataset.skipped_lines``.
    """
    if target not in ("visit", "conversion"):
        raise ValueError(f"target must be 'visit' or 'conversion', got '{target}'")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in CRITEO_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        pos = {c: header.index(c) for c in CRITEO_COLUMNS}
        feat_pos = [pos[c] for c in CRITEO_FEATURES]
        rows_x, rows_t, rows_y, skipped = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                x = [float(row[p]) for p in feat_pos]
                t = float(row[pos["treatment"]])
                y = float(row[pos[target]])
            except (ValueError, IndexError):
                skipped.append(lineno)
                continue
            rows_x.append(x)
            rows_t.append([t])
            rows_y.append(y)
    if not rows_x:
        raise ValueError(f"{path}: no parseable rows")
    X = np.array(rows_x)
    T = np.array(rows_t)
    y = np.array(rows_y)
    schema = build_schema(
        X, T,
        [(name, CONTINUOUS) for name in CRITEO_FEATURES],
        [("treatment", SPARSE, 2)],
    )
    note = f"criteo:{path} target={target}"
    if skipped:
        note += f" skipped={len(skipped)}"
    return Dataset(schema, X, T, y, note, tuple(skipped))


def load_csv(path, x_decls, t_decls, y_column: str) -> Dataset:
    """Schema-driven CSV reader; declarations name every feature column."""
    x_decls = [d if isinstance(d, FeatureSpec) else FeatureSpec(*d) for d in x_decls]
    t_decls = [d if isinstance(d, FeatureSpec) else FeatureSpec(*d) for d in t_decls]
    wanted = [s.name for s in x_decls] + [s.name for s in t_decls] + [y_column]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        pos = [header.index(c) for c in wanted]
        rows, skipped = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([_parse_cell(row[p]) for p in pos])
            except (ValueError, IndexError):
                skipped.append(lineno)
    if not rows:
        raise ValueError(f"{path}: no parseable rows")
    arr = np.array(rows, dtype=np.float64)
    d_x = len(x_decls)
    d_t = len(t_decls)
    X, T, y = arr[:, :d_x], arr[:, d_x:d_x + d_t], arr[:, -1]
    schema = build_schema(X, T, x_decls, t_decls)
    note = f"csv:{path}"
    if skipped:
        note += f" skipped={len(skipped)}"
    return Dataset(schema, X, T, y, note, tuple(skipped))


def _parse_cell(text: str) -> float:
    text = text.strip()
    if text == "":
        return float("nan")  # missing value; imputed downstream
    return float(text)


def save_csv(dataset: Dataset, path) -> None:
    """Write the dataset with shortest round-trip decimal formatting."""
    names = [s.name for s in dataset.schema.x_specs] + \
            [s.name for s in dataset.schema.t_specs] + ["y"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(len(dataset)):
            row = [_format_cell(v) for v in dataset.X[i]]
            row += [_format_cell(v) for v in dataset.T[i]]
            row.append(_format_cell(dataset.y[i]))
            writer.writerow(row)


def _format_cell(v: float) -> str:
    if np.isnan(v):
        return ""
    return repr(float(v))
