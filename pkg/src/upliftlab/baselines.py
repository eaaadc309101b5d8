"""Reference uplift learners over the same encoder and MLP stack.

S-Learner: one response model over all features, with the treatment encoding
as input; the uplift score is the response logit under treatment k minus the
logit under control. T-Learner: one independent response head per group over
the non-treatment features only; the score is head_k minus head_0. For K > 1
the T-Learner simply instantiates K+1 heads (multi-head extension).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .efin import ENC_PREFIX
from .encoder import EncoderParams, FeatureSchema, encode_group_nodes


class _BaselineBase:
    kind = ""

    def __init__(self, schema: FeatureSchema, k_dim: int = 64,
                 hidden_layers: tuple[int, ...] | None = None, seed=0,
                 shared_continuous: bool = False, init_scale: float | None = None):
        self.schema = schema
        self.k_dim = int(k_dim)
        rng = np.random.default_rng(seed)
        self.encoder = EncoderParams(schema, self.k_dim, rng, scale=init_scale,
                                     shared_continuous=shared_continuous)
        self.params: dict[str, np.ndarray] = {
            ENC_PREFIX + name: arr for name, arr in self.encoder.arrays.items()
        }
        self.encoder.arrays = {name: self.params[ENC_PREFIX + name] for name in self.encoder.arrays}
        self.hidden = self._init_heads(rng, hidden_layers)
        self.descriptors: np.ndarray | None = None

    def _init_heads(self, rng, hidden_layers):
        raise NotImplementedError

    def leaves(self, trainable: bool = True) -> dict[str, ad.Node]:
        if trainable:
            return {k: ad.parameter(v, name=k) for k, v in self.params.items()}
        return {k: ad.constant(v) for k, v in self.params.items()}

    def set_descriptors(self, descriptors: np.ndarray) -> None:
        descriptors = np.asarray(descriptors, dtype=np.float64)
        expected = (self.schema.n_treatments + 1, self.schema.d_t)
        if descriptors.shape != expected:
            raise ValueError(f"descriptors shape {descriptors.shape}, expected {expected}")
        self.descriptors = descriptors

    def _descriptor_rows(self, k: int, n: int) -> np.ndarray:
        if self.descriptors is None:
            raise ValueError("treatment descriptors not set")
        if not 0 <= k <= self.schema.n_treatments:
            raise ValueError(f"unknown treatment {k}")
        return np.tile(self.descriptors[k], (n, 1))

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k in self.params:
            np.copyto(self.params[k], params[k])

    def _config_dict(self) -> dict:
        return {"k_dim": self.k_dim, "hidden_layers": list(self.hidden)}

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, kind=self.kind, schema=self.schema,
                        config=self._config_dict(), params=self.params,
                        descriptors=self.descriptors, extra=extra)

    @classmethod
    def load(cls, path, expect_schema: FeatureSchema | None = None):
        ck = load_checkpoint(path, expect_schema)
        if ck.kind != cls.kind:
            raise ValueError(f"checkpoint holds a '{ck.kind}' model, not '{cls.kind}'")
        model = cls(ck.schema, k_dim=ck.config["k_dim"],
                    hidden_layers=tuple(ck.config["hidden_layers"]), seed=0)
        model.load_params(ck.params)
        if ck.descriptors is not None:
            model.set_descriptors(ck.descriptors)
        model.loaded_extra = ck.extra
        return model

    def _regularizer(self, leaves, lam: float, total: ad.Node) -> ad.Node:
        if not lam:
            return total
        reg = None
        for name in sorted(leaves):
            sq = ad.mul(leaves[name], leaves[name]).sum()
            reg = sq if reg is None else ad.add(reg, sq)
        return ad.add(total, ad.scale(reg, lam))


class SLearnerModel(_BaselineBase):
    """Single response model; treatment enters only as input features."""

    kind = "slearner"

    def _init_heads(self, rng, hidden_layers):
        in_dim = (self.schema.d_x + self.schema.d_t) * self.k_dim
        hidden = nn.default_hidden(in_dim) if hidden_layers is None else tuple(hidden_layers)
        nn.init_mlp(self.params, "response", in_dim, hidden, 1, rng)
        return hidden

    def _response_logits(self, leaves, X, T) -> ad.Node:
        n = len(X)
        ex = encode_group_nodes(leaves, ENC_PREFIX, self.schema, "x", X, self.encoder)
        et = encode_group_nodes(leaves, ENC_PREFIX, self.schema, "t", T, self.encoder)
        flat = ad.concat([ad.reshape(ex, (n, self.schema.d_x * self.k_dim)),
                          ad.reshape(et, (n, self.schema.d_t * self.k_dim))], axis=1)
        return ad.reshape(nn.mlp_forward(leaves, "response", flat, self.hidden), (n,))

    def composite_loss(self, X, T, y, lam: float):
        leaves = self.leaves()
        logits = self._response_logits(leaves, X, T)
        loss = ad.bce_with_logits(logits, np.asarray(y, dtype=np.float64)).mean()
        loss = self._regularizer(leaves, lam, loss)
        return loss, leaves, {"response": loss}, logits

    def uplift_scores(self, X: np.ndarray, k: int, chunk: int = 8192) -> np.ndarray:
        out = np.empty(len(X))
        leaves = self.leaves(trainable=False)
        T_k = self._descriptor_rows(k, len(X))
        T_0 = self._descriptor_rows(0, len(X))
        for lo in range(0, len(X), chunk):
            hi = min(lo + chunk, len(X))
            with_k = self._response_logits(leaves, X[lo:hi], T_k[lo:hi]).value
            with_0 = self._response_logits(leaves, X[lo:hi], T_0[lo:hi]).value
            out[lo:hi] = with_k - with_0
        return out


class TLearnerModel(_BaselineBase):
    """K+1 independent response heads, one per group, no parameter sharing.

    Heads are initialized identically, so an untrained model scores exactly 0.
    """

    kind = "tlearner"

    def _init_heads(self, rng, hidden_layers):
        in_dim = self.schema.d_x * self.k_dim
        hidden = nn.default_hidden(in_dim) if hidden_layers is None else tuple(hidden_layers)
        template: dict[str, np.ndarray] = {}
        nn.init_mlp(template, "head", in_dim, hidden, 1, rng)
        for k in range(self.schema.n_treatments + 1):
            for name, arr in template.items():
                self.params[name.replace("head", f"head{k}", 1)] = arr.copy()
        return hidden

    def _head_logits(self, leaves, k: int, X) -> ad.Node:
        n = len(X)
        ex = encode_group_nodes(leaves, ENC_PREFIX, self.schema, "x", X, self.encoder)
        flat = ad.reshape(ex, (n, self.schema.d_x * self.k_dim))
        return ad.reshape(nn.mlp_forward(leaves, f"head{k}", flat, self.hidden), (n,))

    def composite_loss(self, X, T, y, lam: float):
        leaves = self.leaves()
        y = np.asarray(y, dtype=np.float64)
        t_idx = self.schema.treatment_indices(T)
        total = None
        for k in range(self.schema.n_treatments + 1):
            mask = (t_idx == k).astype(np.float64)
            count = int(mask.sum())
            if count == 0:
                continue
            logits = self._head_logits(leaves, k, X)
            term = ad.scale(ad.mul(ad.bce_with_logits(logits, y), mask).sum(), 1.0 / count)
            total = term if total is None else ad.add(total, term)
        if total is None:
            raise ValueError("batch contains no instances of any group")
        total = self._regularizer(leaves, lam, total)
        return total, leaves, {"response": total}, None

    def uplift_scores(self, X: np.ndarray, k: int, chunk: int = 8192) -> np.ndarray:
        if not 0 <= k <= self.schema.n_treatments:
            raise ValueError(f"unknown treatment {k}")
        out = np.empty(len(X))
        leaves = self.leaves(trainable=False)
        for lo in range(0, len(X), chunk):
            hi = min(lo + chunk, len(X))
            head_k = self._head_logits(leaves, k, X[lo:hi]).value
            head_0 = self._head_logits(leaves, 0, X[lo:hi]).value
            out[lo:hi] = head_k - head_0
        return out


def slearner_uplift(instance, k: int, model: SLearnerModel) -> float:
    x = np.asarray(instance.x, dtype=np.float64).reshape(1, -1)
    return float(model.uplift_scores(x, k)[0])


def tlearner_uplift(instance, k: int, model: TLearnerModel) -> float:
    x = np.asarray(instance.x, dtype=np.float64).reshape(1, -1)
    return float(model.uplift_scores(x, k)[0])
