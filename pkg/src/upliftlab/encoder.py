"""Feature schema and embedding encoders for marketing instances.

Each feature is declared continuous or sparse. Continuous features embed as
an affine map of the (standardized) raw value, so similar values land on
nearby embeddings; sparse features embed by table lookup, with out-of-range
values falling back to the reserved row 0. The first treatment feature is
always the sparse treatment index ID with cardinality K+1 (0 = control).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

CONTINUOUS = "continuous"
SPARSE = "sparse"


class SchemaError(ValueError):
    """Schema declaration does not match the data it describes."""


@dataclass(frozen=True)
class FeatureSpec:
    """Declaration of one feature column.

    ``cardinality`` is the embedding-table size for sparse features and may
    be left None in declarations passed to ``build_schema`` (inferred from
    data as max value + 1). Continuous features ignore it.
    """

    name: str
    kind: str
    cardinality: int | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, SPARSE):
            raise SchemaError(f"feature '{self.name}': unknown kind '{self.kind}'")
        if self.kind == SPARSE and self.cardinality is not None and self.cardinality < 1:
            raise SchemaError(f"feature '{self.name}': cardinality must be >= 1")


@dataclass
class FeatureSchema:
    """Ordered feature declarations plus standardization statistics.

    ``norm`` maps continuous feature names to (mean, std) fitted on a
    training split; missing entries mean identity normalization.
    """

    x_specs: list[FeatureSpec]
    t_specs: list[FeatureSpec]
    norm: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        names = [s.name for s in self.x_specs] + [s.name for s in self.t_specs]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique across the schema")
        if not self.t_specs:
            raise SchemaError("schema needs at least the treatment index feature")
        head = self.t_specs[0]
        if head.kind != SPARSE or head.cardinality is None or head.cardinality < 2:
            raise SchemaError("t_specs[0] must be sparse with cardinality K+1 >= 2")
        for spec in self.x_specs + self.t_specs:
            if spec.kind == SPARSE and spec.cardinality is None:
                raise SchemaError(f"sparse feature '{spec.name}' has no cardinality")

    @property
    def d_x(self) -> int:
        return len(self.x_specs)

    @property
    def d_t(self) -> int:
        return len(self.t_specs)

    @property
    def n_treatments(self) -> int:
        return self.t_specs[0].cardinality - 1

    def to_json(self) -> str:
        doc = {
            "x": [[s.name, s.kind, s.cardinality] for s in self.x_specs],
            "t": [[s.name, s.kind, s.cardinality] for s in self.t_specs],
            "norm": {k: [float(m), float(s)] for k, (m, s) in self.norm.items()},
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        doc = json.loads(text)
        return cls(
            x_specs=[FeatureSpec(n, k, c) for n, k, c in doc["x"]],
            t_specs=[FeatureSpec(n, k, c) for n, k, c in doc["t"]],
            norm={k: (v[0], v[1]) for k, v in doc["norm"].items()},
        )

    def schema_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def refit_normalization(self, X: np.ndarray, T: np.ndarray) -> "FeatureSchema":
        """New schema with (mean, std) recomputed from the given training data."""
        norm = {}
        for specs, V in ((self.x_specs, X), (self.t_specs, T)):
            for j, spec in enumerate(specs):
                if spec.kind != CONTINUOUS:
                    continue
                col = np.asarray(V[:, j], dtype=np.float64)
                m = float(np.nanmean(col)) if np.isfinite(col).any() else 0.0
                s = float(np.nanstd(col))
                norm[spec.name] = (m, s if s > 1e-12 else 1.0)
        return FeatureSchema(list(self.x_specs), list(self.t_specs), norm)

    def _normalize(self, specs, V: np.ndarray) -> np.ndarray:
        out = np.array(V, dtype=np.float64, copy=True)
        if out.ndim != 2 or out.shape[1] != len(specs):
            raise SchemaError(f"expected {len(specs)} columns, got shape {out.shape}")
        for j, spec in enumerate(specs):
            if spec.kind != CONTINUOUS:
                continue
            m, s = self.norm.get(spec.name, (0.0, 1.0))
            col = out[:, j]
            col[~np.isfinite(col)] = m  # mean imputation for missing values
            out[:, j] = (col - m) / s
        return out

    def normalize_x(self, X: np.ndarray) -> np.ndarray:
        return self._normalize(self.x_specs, X)

    def normalize_t(self, T: np.ndarray) -> np.ndarray:
        return self._normalize(self.t_specs, T)

    def treatment_indices(self, T: np.ndarray) -> np.ndarray:
        return sparse_indices(np.asarray(T)[:, 0], self.t_specs[0])


def sparse_indices(values, spec: FeatureSpec) -> np.ndarray:
    """Map raw sparse values to table rows; anything out of range hits row 0."""
    v = np.asarray(values, dtype=np.float64)
    idx = np.where(np.isfinite(v), v, -1.0).astype(np.int64)
    oov = (idx < 0) | (idx >= spec.cardinality) | ~np.isfinite(v)
    idx[oov] = 0
    return idx


def build_schema(X: np.ndarray, T: np.ndarray, x_decls, t_decls) -> FeatureSchema:
    """Schema from declarations plus a data sample.

    Sparse declarations without a cardinality get it inferred from the data
    (max value + 1). Standardization stats are fitted on the sample.
    """
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)

    def resolve(decls, V, label):
        decls = [d if isinstance(d, FeatureSpec) else FeatureSpec(*d) for d in decls]
        if V.ndim != 2 or V.shape[1] != len(decls):
            raise SchemaError(
                f"{label}: data has {V.shape[1] if V.ndim == 2 else '?'} columns, "
                f"declarations cover {len(decls)}"
            )
        out = []
        for j, spec in enumerate(decls):
            if spec.kind == SPARSE and spec.cardinality is None:
                col = V[:, j]
                top = int(np.nanmax(col)) if np.isfinite(col).any() else 0
                spec = FeatureSpec(spec.name, SPARSE, max(top + 1, 1))
            out.append(spec)
        return out

    schema = FeatureSchema(resolve(x_decls, X, "x"), resolve(t_decls, T, "t"))
    return schema.refit_normalization(X, T)


class EncoderParams:
    """Per-feature embedding parameters, keyed '<feature>.weight/.bias/.table'.

    Continuous features j carry a weight vector and bias of length ``k_dim``;
    sparse features carry a (cardinality x k_dim) table. With
    ``shared_continuous`` all continuous features of a group (x or t) share
    one weight/bias pair.
    """

    def __init__(self, schema: FeatureSchema, k_dim: int, rng: np.random.Generator,
                 scale: float | None = None, shared_continuous: bool = False):
        if k_dim < 1:
            raise ValueError("k_dim must be >= 1")
        self.k_dim = int(k_dim)
        self.shared_continuous = bool(shared_continuous)
        s = (1.0 / math.sqrt(k_dim)) if scale is None else float(scale)
        self.arrays: dict[str, np.ndarray] = {}

        def uniform(shape):
            return rng.uniform(-s, s, size=shape)

        for group, specs in (("x", schema.x_specs), ("t", schema.t_specs)):
            if shared_continuous and any(sp.kind == CONTINUOUS for sp in specs):
                self.arrays[f"{group}#shared.weight"] = uniform(k_dim)
                self.arrays[f"{group}#shared.bias"] = uniform(k_dim)
            for spec in specs:
                if spec.kind == SPARSE:
                    self.arrays[f"{spec.name}.table"] = uniform((spec.cardinality, k_dim))
                elif not shared_continuous:
                    self.arrays[f"{spec.name}.weight"] = uniform(k_dim)
                    self.arrays[f"{spec.name}.bias"] = uniform(k_dim)

    def continuous_keys(self, group: str, spec: FeatureSpec) -> tuple[str, str]:
        if self.shared_continuous:
            return f"{group}#shared.weight", f"{group}#shared.bias"
        return f"{spec.name}.weight", f"{spec.name}.bias"


def encode_feature(value, spec: FeatureSpec, enc: EncoderParams, group: str = "x") -> np.ndarray:
    """Embed one raw feature value (no normalization applied here)."""
    if spec.kind == CONTINUOUS:
        v = float(value)
        if not math.isfinite(v):
            raise ValueError(f"feature '{spec.name}': non-finite continuous value")
        wk, bk = enc.continuous_keys(group, spec)
        return enc.arrays[wk] * v + enc.arrays[bk]
    idx = int(sparse_indices(np.array([value]), spec)[0])
    return enc.arrays[f"{spec.name}.table"][idx].copy()


def encode_instance(instance, schema: FeatureSchema, enc: EncoderParams):
    """Embed one instance into its per-feature vectors (e_x list, e_t list).

    Continuous values are standardized with the schema stats first.
    """
    x = np.asarray(instance.x, dtype=np.float64).reshape(1, -1)
    t = np.asarray(instance.t, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != schema.d_x or t.shape[1] != schema.d_t:
        raise SchemaError(
            f"instance arity ({x.shape[1]}, {t.shape[1]}) does not match schema "
            f"({schema.d_x}, {schema.d_t})"
        )
    xn = schema.normalize_x(x)[0]
    tn = schema.normalize_t(t)[0]
    e_x = [encode_feature(xn[j], schema.x_specs[j], enc, "x") for j in range(schema.d_x)]
    e_t = [encode_feature(tn[j], schema.t_specs[j], enc, "t") for j in range(schema.d_t)]
    return e_x, e_t


def encode_group_nodes(leaves, prefix: str, schema: FeatureSchema, group: str,
                       values: np.ndarray, enc: EncoderParams) -> ad.Node:
    """Batched embedding of one feature group as a Node of shape [n, d, k_dim].

    ``values`` must be raw (unnormalized); standardization happens here so
    the batched path and ``encode_instance`` agree exactly.
    """
    specs = schema.x_specs if group == "x" else schema.t_specs
    V = schema.normalize_x(values) if group == "x" else schema.normalize_t(values)
    n, d = V.shape
    k = enc.k_dim

    if all(sp.kind == CONTINUOUS for sp in specs) and d > 0:
        # Single fused block: e[n,d,k] = v[n,d,1] * W[d,k] + B[d,k]
        wk = [enc.continuous_keys(group, sp) for sp in specs]
        w_stack = ad.concat([ad.reshape(leaves[prefix + w], (1, k)) for w, _ in wk], axis=0)
        b_stack = ad.concat([ad.reshape(leaves[prefix + b], (1, k)) for _, b in wk], axis=0)
        v3 = ad.broadcast_to(ad.constant(V.reshape(n, d, 1)), (n, d, k))
        w3 = ad.broadcast_to(ad.reshape(w_stack, (1, d, k)), (n, d, k))
        b3 = ad.broadcast_to(ad.reshape(b_stack, (1, d, k)), (n, d, k))
        return ad.add(ad.mul(v3, w3), b3)

    cols = []
    for j, spec in enumerate(specs):
        if spec.kind == CONTINUOUS:
            wk, bk = enc.continuous_keys(group, spec)
            col = ad.constant(V[:, j].reshape(n, 1))
            e = ad.add_bias(ad.matmul(col, ad.reshape(leaves[prefix + wk], (1, k))),
                            leaves[prefix + bk])
        else:
            idx = sparse_indices(V[:, j], spec)
            e = ad.lookup(leaves[f"{prefix}{spec.name}.table"], idx)
        cols.append(ad.reshape(e, (n, 1, k)))
    return ad.concat(cols, axis=1)
