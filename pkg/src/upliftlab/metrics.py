"""Ranking metrics for uplift models: LIFT@h, Qini, uplift curves, WAU.

All metrics are rank statistics over (score, treated, response) records and
therefore invariant under strictly monotone transformations of the scores.

Conventions (fixed, shared with the naive re-scan oracle in the test suite):
- records are ranked by descending score, ties broken by input order (stable);
- at prefix k the Qini value is Y_T(k) - Y_C(k) * N_T(k) / N_C(k), where the
  second term is 0 while N_C(k) = 0;
- the uplift-curve value is (Y_T(k)/N_T(k) - Y_C(k)/N_C(k)) * k, with terms
  whose denominator is 0 contributing 0;
- curves start at (0, 0); areas use trapezoidal integration over the prefix
  fraction k/n;
- normalized coefficients are (model area - diagonal area) / (perfect area -
  diagonal area), where the diagonal is the chord from (0,0) to (1, final
  value) and the perfect ordering puts treated responders first and control
  responders last (score +1 / 0 / -1);
- WAU splits the ranking into equal-size bins (larger bins first when n is
  not divisible), weighs each bin's treated-minus-control response gap by its
  share of treated records, and treats an empty arm's mean as 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import ceil

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric is undefined on this input (e.g. an empty study arm)."""


@dataclass(frozen=True)
class ScoredRecord:
    """One scored evaluation row: predicted uplift, arm flag, observed response."""

    score: float
    treated: bool
    response: float


@dataclass
class CurvePoints:
    """Cumulative metric values over ascending prefix fractions, starting at (0, 0)."""

    fractions: np.ndarray
    values: np.ndarray

    def area(self) -> float:
        return float(np.trapz(self.values, self.fractions))


def _to_arrays(records):
    if isinstance(records, tuple) and len(records) == 3:
        s, t, y = (np.asarray(a) for a in records)
    else:
        records = list(records)
        s = np.array([r.score for r in records], dtype=np.float64)
        t = np.array([r.treated for r in records])
        y = np.array([r.response for r in records], dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=bool)
    y = np.asarray(y, dtype=np.float64)
    if s.size == 0:
        raise UndefinedMetricError("no records")
    if not np.all(np.isfinite(s)):
        raise UndefinedMetricError("scores must be finite")
    return s, t, y


def _ranking(scores: np.ndarray) -> np.ndarray:
    # argsort of the negated scores with a stable kind keeps input order on ties
    return np.argsort(-scores, kind="stable")


def _prefix_counts(t: np.ndarray, y: np.ndarray):
    yt = np.cumsum(np.where(t, y, 0.0))
    nt = np.cumsum(t.astype(np.float64))
    yc = np.cumsum(np.where(t, 0.0, y))
    nc = np.cumsum((~t).astype(np.float64))
    return yt, nt, yc, nc


def _qini_values(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    yt, nt, yc, nc = _prefix_counts(t, y)
    scaled = np.divide(yc * nt, nc, out=np.zeros_like(yc), where=nc > 0)
    return yt - scaled


def _uplift_values(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    yt, nt, yc, nc = _prefix_counts(t, y)
    rt = np.divide(yt, nt, out=np.zeros_like(yt), where=nt > 0)
    rc = np.divide(yc, nc, out=np.zeros_like(yc), where=nc > 0)
    k = np.arange(1, len(t) + 1, dtype=np.float64)
    return (rt - rc) * k


def _curve(values: np.ndarray) -> CurvePoints:
    n = len(values)
    fractions = np.arange(0, n + 1, dtype=np.float64) / n
    return CurvePoints(fractions, np.concatenate(([0.0], values)))


def perfect_scores(treated: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Scores realizing the perfect ordering: treated responders first,
    control responders last, everyone else in between."""
    t = np.asarray(treated, dtype=bool)
    y = np.asarray(response, dtype=np.float64)
    return np.where(t & (y > 0), 1.0, 0.0) - np.where(~t & (y > 0), 1.0, 0.0)


def _normalized(values_fn, s, t, y):
    if not t.any() or t.all():
        raise UndefinedMetricError("need at least one treated and one control record")
    order = _ranking(s)
    curve = _curve(values_fn(t[order], y[order]))
    final = curve.values[-1]
    diag_area = final / 2.0
    perf_order = _ranking(perfect_scores(t, y))
    perf_area = _curve(values_fn(t[perf_order], y[perf_order])).area()
    denom = perf_area - diag_area
    coef = 0.0 if denom == 0.0 else (curve.area() - diag_area) / denom
    return curve, float(coef)


def qini(records):
    """Qini curve and its normalized coefficient.

    Returns:
        (CurvePoints, float): curve over prefix fractions and the coefficient
        scaled so a perfect ordering gives 1 and a random ordering about 0.
    """
    s, t, y = _to_arrays(records)
    return _normalized(_qini_values, s, t, y)


def auuc(records):
    """Uplift curve and its normalized area (same normalization as ``qini``)."""
    s, t, y = _to_arrays(records)
    return _normalized(_uplift_values, s, t, y)


def lift_at_h(records, h: float) -> float:
    """Treated-minus-control mean response within the top h percent by score."""
    if not 0 < h <= 100:
        raise UndefinedMetricError(f"h must be in (0, 100], got {h}")
    s, t, y = _to_arrays(records)
    top = _ranking(s)[: ceil(h / 100.0 * len(s))]
    tt, ty = t[top], y[top]
    if not tt.any() or tt.all():
        raise UndefinedMetricError(
            f"top {h}% segment lacks a treated or control record; lift undefined"
        )
    return float(ty[tt].mean() - ty[~tt].mean())


def wau(records, bins: int = 10) -> float:
    """Weighted average uplift over equal-size score bins.

    Per-bin uplift is mean treated response minus mean control response; bins
    are weighted by their share of all treated records.
    """
    if bins < 1:
        raise UndefinedMetricError("bins must be >= 1")
    s, t, y = _to_arrays(records)
    if not t.any():
        raise UndefinedMetricError("no treated records; WAU undefined")
    order = _ranking(s)
    total = 0.0
    treated_total = float(t.sum())
    for chunk in np.array_split(order, bins):
        if chunk.size == 0:
            continue
        ct, cy = t[chunk], y[chunk]
        n_treat = float(ct.sum())
        if n_treat == 0:
            continue
        mean_t = float(cy[ct].mean())
        mean_c = float(cy[~ct].mean()) if (~ct).any() else 0.0
        total += (mean_t - mean_c) * (n_treat / treated_total)
    return total


def multi_treatment_average(values) -> float:
    """Unweighted mean of per-treatment metric values."""
    values = list(values)
    if not values:
        raise UndefinedMetricError("no per-treatment values to average")
    return float(np.mean(values))


def records_from_arrays(scores, treated, response) -> list[ScoredRecord]:
    return [
        ScoredRecord(float(s), bool(t), float(y))
        for s, t, y in zip(scores, treated, response)
    ]


def binary_records_for_treatment(scores, t_index, response, k: int):
    """Reduce a multi-treatment evaluation set to 'treatment k vs control'.

    Keeps only rows assigned to control or to treatment k; the treated flag
    marks membership in treatment k. ``scores`` are the model's scores for
    treatment k over all rows.
    """
    t_index = np.asarray(t_index)
    keep = (t_index == 0) | (t_index == k)
    scores = np.asarray(scores, dtype=np.float64)[keep]
    treated = t_index[keep] == k
    response = np.asarray(response, dtype=np.float64)[keep]
    return (scores, treated, response)


def read_scored_csv(path) -> list[ScoredRecord]:
    """Read records from a CSV with header ``score,treated,response``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"score", "treated", "response"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise UndefinedMetricError(
                f"scored CSV must have columns {sorted(required)}, got {reader.fieldnames}"
            )
        return [
            ScoredRecord(float(row["score"]), bool(int(float(row["treated"]))),
                         float(row["response"]))
            for row in reader
        ]


def write_scored_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score", "treated", "response"])
        for r in records:
            writer.writerow([repr(float(r.score)), int(r.treated), repr(float(r.response))])


def write_curve_csv(path, curve: CurvePoints) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "value"])
        for f, v in zip(curve.fractions, curve.values):
            writer.writerow([repr(float(f)), repr(float(v))])
