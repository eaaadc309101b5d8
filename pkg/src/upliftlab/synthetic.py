"""Synthetic marketing campaigns with known per-instance ground truth.

Generates feature vectors, a natural-response surface, per-treatment effect
surfaces, and an assignment policy (randomized or confounded), then samples
observed binary responses. The hidden truths (natural response probability,
true effect per treatment, assignment propensities) are emitted alongside the
dataset so tests can measure effect recovery directly.

The effect for treatment k is
    tau_k(x) = effect_scale * min(p0, 1 - p0) * tanh(a_k . x + c_k [+ g_k x0 x1])
which keeps p0 + tau_k inside [0, 1] by scaling the effect rather than
truncating the natural response, so the emitted truths stay exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import sigmoid_values
from .data import Dataset
from .encoder import CONTINUOUS, SPARSE, FeatureSchema, FeatureSpec


@dataclass
class GeneratorConfig:
    """Everything that determines a synthetic campaign; the seed fixes all draws.

    Parameters:
    - n, d_x, n_treatments: row count, feature count, number K of treatments
    - assignment: "rct" (iid draws from rct_probabilities) or "confounded"
      (softmax of per-group logit weights applied to x)
    - effect_weights [K, d_x], effect_intercepts [K]: linear effect family;
      None means they are drawn from the seed
    - interaction: adds a g_k * x0 * x1 term to each effect surface
    - effect_scale in (0, 1]: fraction of the feasible range the effect may use
    """

    n: int
    d_x: int = 8
    n_treatments: int = 1
    assignment: str = "rct"
    rct_probabilities: tuple[float, ...] | None = None
    confound_weights: np.ndarray | None = None
    confound_strength: float = 1.0
    base_weights: np.ndarray | None = None
    base_intercept: float = -1.0
    base_scale: float = 0.4
    effect_weights: np.ndarray | None = None
    effect_intercepts: np.ndarray | None = None
    effect_weight_scale: float = 0.8
    effect_scale: float = 0.8
    interaction: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d_x < 1 or self.n_treatments < 1:
            raise ValueError("n, d_x and n_treatments must all be >= 1")
        if self.assignment not in ("rct", "confounded"):
            raise ValueError(f"unknown assignment policy '{self.assignment}'")
        if not 0 < self.effect_scale <= 1:
            raise ValueError(
                f"effect_scale {self.effect_scale} is infeasible: effects could push "
                "response probabilities outside [0, 1]"
            )
        if self.rct_probabilities is not None:
            p = np.asarray(self.rct_probabilities, dtype=np.float64)
            if len(p) != self.n_treatments + 1 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError("rct_probabilities must be K+1 nonnegative values summing to 1")


@dataclass(frozen=True)
class SyntheticTruth:
    """Hidden ground truth for one instance."""

    p0: float
    tau: np.ndarray
    pi: np.ndarray


class SyntheticTruthTable:
    """Column store of per-instance truths, aligned with the dataset rows."""

    def __init__(self, p0: np.ndarray, tau: np.ndarray, pi: np.ndarray):
        self.p0 = np.asarray(p0, dtype=np.float64)
        self.tau = np.asarray(tau, dtype=np.float64)
        self.pi = np.asarray(pi, dtype=np.float64)
        if (self.p0 < 0).any() or (self.p0 > 1).any():
            raise ValueError("p0 outside [0, 1]")
        reach = self.p0[:, None] + self.tau
        if (reach < -1e-12).any() or (reach > 1 + 1e-12).any():
            raise ValueError("p0 + tau leaves [0, 1]")
        if np.abs(self.pi.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("propensities must sum to 1")

    def __len__(self) -> int:
        return len(self.p0)

    def __getitem__(self, i: int) -> SyntheticTruth:
        return SyntheticTruth(float(self.p0[i]), self.tau[i].copy(), self.pi[i].copy())


def _default(arr, rng, shape, scale):
    if arr is not None:
        out = np.asarray(arr, dtype=np.float64)
        if out.shape != shape:
            raise ValueError(f"expected shape {shape}, got {out.shape}")
        return out
    return rng.standard_normal(shape) * scale


def generate(config: GeneratorConfig):
    """Sample a campaign; returns (Dataset, SyntheticTruthTable).

    Treatment features are the index ID plus one continuous "amount" column
    monotone in the index, so related treatments have related encodings.
    """
    rng = np.random.default_rng(config.seed)
    n, d, K = config.n, config.d_x, config.n_treatments

    X = rng.standard_normal((n, d))
    w0 = _default(config.base_weights, rng, (d,), config.base_scale)
    p0 = sigmoid_values(X @ w0 + config.base_intercept)

    A = _default(config.effect_weights, rng, (K, d), config.effect_weight_scale)
    c = _default(config.effect_intercepts, rng, (K,), 0.3)
    raw = X @ A.T + c
    if config.interaction:
        g = rng.standard_normal(K) * 0.5
        raw = raw + np.outer(X[:, 0] * X[:, 1 % d], g)
    margin = config.effect_scale * np.minimum(p0, 1.0 - p0)
    tau = margin[:, None] * np.tanh(raw)

    if config.assignment == "rct":
        probs = config.rct_probabilities
        if probs is None:
            probs = tuple(1.0 / (K + 1) for _ in range(K + 1))
        pi = np.tile(np.asarray(probs, dtype=np.float64), (n, 1))
    else:
        U = config.confound_weights
        if U is None:
            U = np.zeros((K + 1, d))
            U[1:] = rng.standard_normal((K, d)) * 0.7
        U = np.asarray(U, dtype=np.float64) * config.confound_strength
        logits = X @ U.T
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        pi = e / e.sum(axis=1, keepdims=True)

    cum = np.cumsum(pi, axis=1)
    u = rng.random(n)
    t_idx = (u[:, None] >= cum).sum(axis=1)

    amounts = np.arange(K + 1, dtype=np.float64) / K
    T = np.column_stack([t_idx.astype(np.float64), amounts[t_idx]])

    p_obs = np.where(t_idx == 0, p0, p0 + tau[np.arange(n), np.maximum(t_idx - 1, 0)])
    y = (rng.random(n) < p_obs).astype(np.float64)

    schema = FeatureSchema(
        x_specs=[FeatureSpec(f"x{j}", CONTINUOUS) for j in range(d)],
        t_specs=[FeatureSpec("treatment_id", SPARSE, K + 1),
                 FeatureSpec("treatment_amount", CONTINUOUS)],
    ).refit_normalization(X, T)

    dataset = Dataset(schema, X, T, y, provenance=f"synthetic seed={config.seed} n={n}")
    truths = SyntheticTruthTable(p0, tau, pi)
    return dataset, truths


def truth_csv_path(data_path) -> str:
    text = str(data_path)
    if text.endswith(".csv"):
        return text[:-4] + ".truth.csv"
    return text + ".truth.csv"


def save_truth_csv(truths: SyntheticTruthTable, path) -> None:
    """Sibling truth file: p0, tau_1..K, pi_0..K per row."""
    K = truths.tau.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p0"] + [f"tau_{k}" for k in range(1, K + 1)]
                        + [f"pi_{k}" for k in range(K + 1)])
        for i in range(len(truths)):
            row = [repr(float(truths.p0[i]))]
            row += [repr(float(v)) for v in truths.tau[i]]
            row += [repr(float(v)) for v in truths.pi[i]]
            writer.writerow(row)
