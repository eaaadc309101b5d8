"""Treatment-aware uplift network.

Four stages over embedded features:

1. self-attention across the non-treatment feature tokens feeds an MLP that
   predicts the natural-response logit (what the user does untreated);
2. a treatment-conditioned attention scores every non-treatment feature
   against the treatment encoding, and the attention-weighted sum of the raw
   feature embeddings becomes the uplift representation;
3. the uplift head reads a scalar effect from that representation; the
   treated-response logit is natural logit + effect (composition happens in
   logit space, so ranking by the raw effect is scale-free);
4. a group head trained with inverted group labels pushes the uplift
   representation to be uninformative about which arm an instance came from,
   which matters when treatment assignment was not randomized.

Supervision: control instances supervise the natural head, treated instances
the treated-response logit, and every instance feeds the inverted-label group
loss; each term is mean-normalized by its own instance count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderParams, FeatureSchema, encode_group_nodes

ENC_PREFIX = "enc."


@dataclass
class EfinConfig:
    """Architecture knobs; ``k_dim`` is the embedding dimension (rank).

    The three module switches support ablations: with ``self_interaction``
    off the feature tokens pass through unchanged; with ``treatment_aware``
    off the attention weights are frozen uniform (scores become treatment
    independent); with ``intervention_constraint`` off the group loss is
    dropped entirely.
    """

    k_dim: int = 64
    attention_dim: int | None = None
    hidden_layers: tuple[int, ...] | None = None
    self_interaction: bool = True
    treatment_aware: bool = True
    intervention_constraint: bool = True
    lc_weight: float = 1.0
    shared_continuous: bool = False
    init_scale: float | None = None

    def resolved_attention_dim(self) -> int:
        return self.k_dim if self.attention_dim is None else self.attention_dim

    def resolved_hidden(self, d_x: int) -> tuple[int, ...]:
        if self.hidden_layers is None:
            return nn.default_hidden(d_x * self.k_dim)
        return tuple(self.hidden_layers)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["hidden_layers"] is not None:
            d["hidden_layers"] = list(d["hidden_layers"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EfinConfig":
        d = dict(d)
        if d.get("hidden_layers") is not None:
            d["hidden_layers"] = tuple(d["hidden_layers"])
        return cls(**d)


@dataclass
class ForwardOutputs:
    """Per-instance network outputs as graph nodes.

    ``yk_logit`` is built as the single addition ``y0_logit + tau_hat``, so
    the identity yk - y0 == tau holds exactly, not just to rounding.
    """

    y0_logit: ad.Node
    tau_hat: ad.Node
    yk_logit: ad.Node
    group_logits: ad.Node
    attention_alpha: ad.Node
    e_xt: ad.Node
    ebar_x: ad.Node


def self_interaction(ex: ad.Node, k_dim: int) -> ad.Node:
    """Scaled dot-product self-attention over the d_x feature tokens.

    Query, key and value are all the token embeddings themselves; no
    positional encoding since feature order carries no sequence meaning.
    """
    if ex.value.ndim != 3 or ex.value.shape[1] == 0:
        raise ad.ShapeMismatch(f"self_interaction: need [n, d_x>=1, k], got {ex.value.shape}")
    scores = ad.scale(ad.matmul(ex, ad.transpose_last(ex)), 1.0 / math.sqrt(k_dim))
    return ad.matmul(ad.softmax(scores, axis=-1), ex)


def treatment_attention(leaves, ex: ad.Node, et: ad.Node, uniform: bool = False):
    """Score each non-treatment feature against the treatment encoding.

    The treatment tokens are concatenated into one vector (lossless summary),
    projected together with each feature embedding through a relu layer, and
    reduced to one scalar score per feature; a softmax over features yields
    the sensitivity weights alpha. The uplift representation is the
    alpha-weighted sum of the raw feature embeddings.

    With ``uniform`` the weights are frozen at 1/d_x and no attention
    parameters are touched (ablation mode).
    """
    n, d_x, k = ex.value.shape
    if uniform:
        alpha = ad.constant(np.full((n, d_x), 1.0 / d_x))
    else:
        d_t = et.value.shape[1]
        et_flat = ad.reshape(et, (n, d_t * k))
        h_t = ad.matmul(et_flat, leaves["interact.treat_proj"])        # [n, a]
        h_x = ad.matmul(ex, leaves["interact.feat_proj"])              # [n, d_x, a]
        a_dim = h_x.value.shape[-1]
        h = ad.add(h_x, ad.broadcast_to(ad.reshape(h_t, (n, 1, a_dim)), (n, d_x, a_dim)))
        h = ad.relu(ad.add_bias(h, leaves["interact.bias"]))
        scores = ad.reshape(ad.matmul(h, leaves["interact.score"]), (n, d_x))
        alpha = ad.softmax(scores, axis=-1)
    e_xt = ad.reshape(ad.matmul(ad.reshape(alpha, (n, 1, d_x)), ex), (n, k))
    return alpha, e_xt


def predict_natural(leaves, ebar: ad.Node, hidden: tuple[int, ...]) -> ad.Node:
    """Natural-response logit from the concatenated interacted tokens."""
    n, d_x, k = ebar.value.shape
    flat = ad.reshape(ebar, (n, d_x * k))
    return ad.reshape(nn.mlp_forward(leaves, "response", flat, hidden), (n,))


def predict_ite_and_response(leaves, e_xt: ad.Node, y0_logit: ad.Node):
    """Scalar effect from the uplift representation, and the treated logit."""
    n = e_xt.value.shape[0]
    tau = ad.reshape(ad.add_bias(ad.matmul(e_xt, leaves["uplift.weight"]),
                                 leaves["uplift.bias"]), (n,))
    return tau, ad.add(y0_logit, tau)


def predict_group(leaves, e_xt: ad.Node, n_treatments: int) -> ad.Node:
    """Group logits from the uplift representation: scalar when binary,
    K+1 logits for multi-valued treatments."""
    n = e_xt.value.shape[0]
    logits = ad.add_bias(ad.matmul(e_xt, leaves["group.weight"]), leaves["group.bias"])
    if n_treatments == 1:
        return ad.reshape(logits, (n,))
    return logits


def invert_group_label(t0: int, n_treatments: int):
    """Inverted supervision target for the group head.

    Binary case: the opposite label. Multi-valued: the elementwise complement
    of the one-hot group indicator.
    """
    t0 = int(t0)
    if not 0 <= t0 <= n_treatments:
        raise ValueError(f"group index {t0} out of range 0..{n_treatments}")
    if n_treatments == 1:
        return 1 - t0
    target = np.ones(n_treatments + 1)
    target[t0] = 0.0
    return target


def inverted_group_targets(t_idx: np.ndarray, n_treatments: int) -> np.ndarray:
    t_idx = np.asarray(t_idx, dtype=np.int64)
    if t_idx.size and (t_idx.min() < 0 or t_idx.max() > n_treatments):
        raise ValueError("group index out of range")
    if n_treatments == 1:
        return (1 - t_idx).astype(np.float64)
    out = np.ones((len(t_idx), n_treatments + 1))
    out[np.arange(len(t_idx)), t_idx] = 0.0
    return out


class EfinModel:
    """Owns the parameter arrays and wires the forward pass / composite loss."""

    kind = "efin"

    def __init__(self, schema: FeatureSchema, config: EfinConfig | None = None, seed=0):
        self.schema = schema
        self.config = config or EfinConfig()
        rng = np.random.default_rng(seed)
        k = self.config.k_dim
        a_dim = self.config.resolved_attention_dim()
        d_x, d_t = schema.d_x, schema.d_t
        K = schema.n_treatments

        self.encoder = EncoderParams(schema, k, rng, scale=self.config.init_scale,
                                     shared_continuous=self.config.shared_continuous)
        self.params: dict[str, np.ndarray] = {
            ENC_PREFIX + name: arr for name, arr in self.encoder.arrays.items()
        }
        # keep encoder array objects shared so EncoderParams-based helpers see updates
        self.encoder.arrays = {name: self.params[ENC_PREFIX + name] for name in self.encoder.arrays}

        nn.init_mlp(self.params, "response", d_x * k, self.config.resolved_hidden(d_x), 1, rng)
        self.params["interact.treat_proj"] = nn.uniform_init(rng, (d_t * k, a_dim), d_t * k)
        self.params["interact.feat_proj"] = nn.uniform_init(rng, (k, a_dim), k)
        self.params["interact.bias"] = nn.uniform_init(rng, (a_dim,), k)
        self.params["interact.score"] = nn.uniform_init(rng, (a_dim, 1), a_dim)
        self.params["uplift.weight"] = nn.uniform_init(rng, (k, 1), k)
        self.params["uplift.bias"] = nn.uniform_init(rng, (1,), k)
        group_out = 1 if K == 1 else K + 1
        self.params["group.weight"] = nn.uniform_init(rng, (k, group_out), k)
        self.params["group.bias"] = nn.uniform_init(rng, (group_out,), k)

        self.descriptors: np.ndarray | None = None

    def leaves(self, trainable: bool = True) -> dict[str, ad.Node]:
        if trainable:
            return {k: ad.parameter(v, name=k) for k, v in self.params.items()}
        return {k: ad.constant(v) for k, v in self.params.items()}

    def forward_nodes(self, leaves, X: np.ndarray, T: np.ndarray) -> ForwardOutputs:
        return efin_forward(leaves, self.schema, self.config, self.encoder, X, T)

    def loss_nodes(self, leaves, X, T, y, lam: float):
        return efin_loss(leaves, self.schema, self.config, self.encoder, X, T, y, lam)

    def composite_loss(self, X, T, y, lam: float):
        leaves = self.leaves()
        loss, parts, out = self.loss_nodes(leaves, X, T, y, lam)
        return loss, leaves, parts, out

    def uplift_scores(self, X: np.ndarray, k: int, chunk: int = 8192) -> np.ndarray:
        """Effect scores for assigning treatment k to every row of X.

        Only the treatment-conditioned path runs; the natural-response head
        is not needed for ranking.
        """
        T_k = self._descriptor_rows(k, len(X))
        out = np.empty(len(X))
        leaves = self.leaves(trainable=False)
        for lo in range(0, len(X), chunk):
            hi = min(lo + chunk, len(X))
            ex = encode_group_nodes(leaves, ENC_PREFIX, self.schema, "x", X[lo:hi], self.encoder)
            et = encode_group_nodes(leaves, ENC_PREFIX, self.schema, "t", T_k[lo:hi], self.encoder)
            _, e_xt = treatment_attention(leaves, ex, et,
                                          uniform=not self.config.treatment_aware)
            n = hi - lo
            tau = ad.reshape(ad.add_bias(ad.matmul(e_xt, leaves["uplift.weight"]),
                                         leaves["uplift.bias"]), (n,))
            out[lo:hi] = tau.value
        return out

    def representation(self, X: np.ndarray, T: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """Frozen uplift representations for the rows' own treatment features."""
        out = np.empty((len(X), self.config.k_dim))
        leaves = self.leaves(trainable=False)
        for lo in range(0, len(X), chunk):
            hi = min(lo + chunk, len(X))
            ex = encode_group_nodes(leaves, ENC_PREFIX, self.schema, "x", X[lo:hi], self.encoder)
            et = encode_group_nodes(leaves, ENC_PREFIX, self.schema, "t", T[lo:hi], self.encoder)
            _, e_xt = treatment_attention(leaves, ex, et,
                                          uniform=not self.config.treatment_aware)
            out[lo:hi] = e_xt.value
        return out

    def _descriptor_rows(self, k: int, n: int) -> np.ndarray:
        if self.descriptors is None:
            raise ValueError("treatment descriptors not set; call set_descriptors first")
        if not 0 <= k <= self.schema.n_treatments:
            raise ValueError(f"unknown treatment {k} (have 0..{self.schema.n_treatments})")
        return np.tile(self.descriptors[k], (n, 1))

    def set_descriptors(self, descriptors: np.ndarray) -> None:
        descriptors = np.asarray(descriptors, dtype=np.float64)
        expected = (self.schema.n_treatments + 1, self.schema.d_t)
        if descriptors.shape != expected:
            raise ValueError(f"descriptors shape {descriptors.shape}, expected {expected}")
        self.descriptors = descriptors

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k in self.params:
            np.copyto(self.params[k], params[k])

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, kind=self.kind, schema=self.schema,
                        config=self.config.to_dict(), params=self.params,
                        descriptors=self.descriptors, extra=extra)

    @classmethod
    def load(cls, path, expect_schema: FeatureSchema | None = None) -> "EfinModel":
        ck = load_checkpoint(path, expect_schema)
        if ck.kind != cls.kind:
            raise ValueError(f"checkpoint holds a '{ck.kind}' model, not '{cls.kind}'")
        model = cls(ck.schema, EfinConfig.from_dict(ck.config), seed=0)
        model.load_params(ck.params)
        if ck.descriptors is not None:
            model.set_descriptors(ck.descriptors)
        model.loaded_extra = ck.extra
        return model


def efin_forward(leaves, schema: FeatureSchema, config: EfinConfig,
                 encoder: EncoderParams, X: np.ndarray, T: np.ndarray) -> ForwardOutputs:
    """Pure forward pass given parameter nodes (also used by gradient checks)."""
    ex = encode_group_nodes(leaves, ENC_PREFIX, schema, "x", X, encoder)
    et = encode_group_nodes(leaves, ENC_PREFIX, schema, "t", T, encoder)
    ebar = self_interaction(ex, config.k_dim) if config.self_interaction else ex
    y0 = predict_natural(leaves, ebar, config.resolved_hidden(schema.d_x))
    alpha, e_xt = treatment_attention(leaves, ex, et, uniform=not config.treatment_aware)
    tau, yk = predict_ite_and_response(leaves, e_xt, y0)
    group = predict_group(leaves, e_xt, schema.n_treatments)
    return ForwardOutputs(y0, tau, yk, group, alpha, e_xt, ebar)


def efin_loss(leaves, schema: FeatureSchema, config: EfinConfig, encoder: EncoderParams,
              X: np.ndarray, T: np.ndarray, y: np.ndarray, lam: float):
    """Composite training objective.

    Control instances supervise the natural logit, treated instances the
    treated logit, all instances the inverted-label group head; each term is
    averaged over its own count (an absent group simply contributes 0). The
    optional lam * sum(theta^2) regularizer covers every parameter.
    """
    y = np.asarray(y, dtype=np.float64)
    out = efin_forward(leaves, schema, config, encoder, X, T)
    t_idx = schema.treatment_indices(T)
    control = (t_idx == 0).astype(np.float64)
    treated = 1.0 - control

    l_s = _masked_mean(ad.bce_with_logits(out.y0_logit, y), control)
    l_t = _masked_mean(ad.bce_with_logits(out.yk_logit, y), treated)
    total = ad.add(l_s, l_t)

    l_c = None
    if config.intervention_constraint:
        targets = inverted_group_targets(t_idx, schema.n_treatments)
        ce = ad.bce_with_logits(out.group_logits, targets)
        l_c = ad.scale(ce.sum(), 1.0 / ce.value.size)
        total = ad.add(total, ad.scale(l_c, config.lc_weight))

    if lam:
        reg = None
        for name in sorted(leaves):
            p = leaves[name]
            sq = ad.mul(p, p).sum()
            reg = sq if reg is None else ad.add(reg, sq)
        total = ad.add(total, ad.scale(reg, lam))

    parts = {"control_response": l_s, "treated_response": l_t, "group": l_c}
    return total, parts, out


def _masked_mean(values: ad.Node, mask: np.ndarray) -> ad.Node:
    count = int(mask.sum())
    return ad.scale(ad.mul(values, mask).sum(), 1.0 / max(1, count))


def infer_uplift(instance, k: int, model) -> float:
    """Effect score for assigning treatment k to a single instance."""
    if not 1 <= k <= model.schema.n_treatments:
        raise ValueError(f"unknown treatment {k} (have 1..{model.schema.n_treatments})")
    return float(model.uplift_scores(np.asarray(instance.x, dtype=np.float64).reshape(1, -1), k)[0])
