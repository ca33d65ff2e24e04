"""Evaluation criteria and session aggregation.

SRCC (Pearson correlation of average ranks, fractional ranks under ties)
measures prediction monotonicity; PLCC measures linear precision on raw
values — no logistic remapping is applied. The fidelity metric scores a
model's pair probabilities against ground-truth pair probabilities on
held-out pairs, so it also credits calibrated uncertainty. Sessions are
summarized by the elementwise median with the mean absolute deviation about
it, cross-database summaries by image-count-weighted averages, and variant
comparisons by a paired one-sided t-test.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import stdtr

from .losses import DEFAULT_PROB_CLAMP, fidelity_loss, model_probability
from .pairs import PairSample
from .scorer import ScorerParams, forward

METRIC_NAMES = ("srcc", "plcc", "fidelity", "sigma_acc")
WEIGHTED_KEY = "__weighted__"
POOLED_KEY = "__pooled_latent__"


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for constant input")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def _check_lengths(pred, truth):
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(truth)}")
    if len(pred) < 3:
        raise ValueError("need at least 3 observations")


def srcc(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Spearman rank-order correlation with fractional ranks for ties."""
    _check_lengths(pred, truth)
    return _pearson(average_ranks(pred), average_ranks(truth))


def plcc(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Pearson linear correlation on raw values."""
    _check_lengths(pred, truth)
    return _pearson(np.asarray(pred, dtype=np.float64),
                    np.asarray(truth, dtype=np.float64))


def fidelity_metric(params: ScorerParams, test_pairs: Sequence[PairSample],
                    items: Mapping, forbidden_ids: Iterable[str] = (),
                    prob_clamp: float = DEFAULT_PROB_CLAMP) -> float:
    """Mean fidelity loss between ground-truth and model pair probabilities.

    ``forbidden_ids`` guards against train/test contamination: any pair
    touching one of them is an error.
    """
    if not test_pairs:
        raise ValueError("empty pair list")
    forbidden = frozenset(forbidden_ids)
    total = 0.0
    for pair in test_pairs:
        if pair.x_id in forbidden or pair.y_id in forbidden:
            raise ValueError(
                f"pair ({pair.x_id!r}, {pair.y_id!r}) references a training item")
        out_x = forward(params, items[pair.x_id].features)
        out_y = forward(params, items[pair.y_id].features)
        total += fidelity_loss(pair.p, model_probability(out_x, out_y, prob_clamp))
    return total / len(test_pairs)


def uncertainty_order_accuracy(params: ScorerParams,
                               test_pairs: Sequence[PairSample],
                               items: Mapping) -> float:
    """Fraction of held-out pairs whose predicted-std ordering matches the
    ground-truth order label."""
    if not test_pairs:
        raise ValueError("empty pair list")
    hits = 0
    for pair in test_pairs:
        s_x = forward(params, items[pair.x_id].features).sigma
        s_y = forward(params, items[pair.y_id].features).sigma
        pred_t = 1 if s_x >= s_y else -1
        hits += int(pred_t == pair.t)
    return hits / len(test_pairs)


def weighted_aggregate(per_db: Mapping[str, tuple[float, int]]) -> float:
    """Image-count-weighted average of per-database values."""
    if not per_db:
        raise ValueError("empty aggregation input")
    total_n = sum(n for _, n in per_db.values())
    if total_n <= 0:
        raise ValueError("weights must be positive")
    return sum(v * n for v, n in per_db.values()) / total_n


# ---------------------------------------------------------------------------
# Session reports
# ---------------------------------------------------------------------------


@dataclass
class DbMetrics:
    n_images: int
    srcc: float
    plcc: float
    fidelity: float
    sigma_acc: float | None = None

    def as_map(self) -> dict[str, float]:
        out = {"srcc": self.srcc, "plcc": self.plcc, "fidelity": self.fidelity}
        if self.sigma_acc is not None:
            out["sigma_acc"] = self.sigma_acc
        return out


@dataclass
class EvalReport:
    """Per-database and weighted metric values for one session."""

    session: int
    per_db: dict[str, DbMetrics] = field(default_factory=dict)
    pooled_latent_srcc: float | None = None

    def weighted(self) -> DbMetrics:
        def agg(name: str) -> float:
            return weighted_aggregate(
                {db: (getattr(m, name), m.n_images) for db, m in self.per_db.items()})

        sigma = None
        if all(m.sigma_acc is not None for m in self.per_db.values()):
            sigma = weighted_aggregate(
                {db: (m.sigma_acc, m.n_images) for db, m in self.per_db.items()})
        return DbMetrics(n_images=sum(m.n_images for m in self.per_db.values()),
                         srcc=agg("srcc"), plcc=agg("plcc"),
                         fidelity=agg("fidelity"), sigma_acc=sigma)

    def metric_map(self) -> dict[tuple[str, str], float]:
        """Flat {(db, metric): value} view, weighted and pooled rows included."""
        out: dict[tuple[str, str], float] = {}
        for db in sorted(self.per_db):
            for name, value in self.per_db[db].as_map().items():
                out[(db, name)] = value
        for name, value in self.weighted().as_map().items():
            out[(WEIGHTED_KEY, name)] = value
        if self.pooled_latent_srcc is not None:
            out[(POOLED_KEY, "srcc")] = self.pooled_latent_srcc
        return out


@dataclass
class AggregateReport:
    """Elementwise median across sessions plus the mean absolute deviation
    about the median."""

    n_sessions: int
    median: dict[tuple[str, str], float]
    mad: dict[tuple[str, str], float]


def median_across_sessions(reports: Sequence[EvalReport]) -> AggregateReport:
    if not reports:
        raise ValueError("need at least one report")
    keys = reports[0].metric_map().keys()
    median: dict[tuple[str, str], float] = {}
    mad: dict[tuple[str, str], float] = {}
    for key in keys:
        values = np.array([rep.metric_map()[key] for rep in reports])
        med = float(np.median(values))
        median[key] = med
        mad[key] = float(np.mean(np.abs(values - med)))
    return AggregateReport(n_sessions=len(reports), median=median, mad=mad)


def report_to_csv(report: EvalReport, path: str | Path) -> None:
    """One row per database plus a weighted row (and a pooled-latent row
    when a common ground-truth axis is available)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session", "db", "n_images", "srcc", "plcc",
                         "fidelity", "sigma_acc"])

        def fmt(v):
            return "" if v is None else repr(v)

        for db in sorted(report.per_db):
            m = report.per_db[db]
            writer.writerow([report.session, db, m.n_images, repr(m.srcc),
                             repr(m.plcc), repr(m.fidelity), fmt(m.sigma_acc)])
        w = report.weighted()
        writer.writerow([report.session, WEIGHTED_KEY, w.n_images, repr(w.srcc),
                         repr(w.plcc), repr(w.fidelity), fmt(w.sigma_acc)])
        if report.pooled_latent_srcc is not None:
            writer.writerow([report.session, POOLED_KEY, w.n_images,
                             repr(report.pooled_latent_srcc), "", "", ""])


def aggregate_to_csv(agg: AggregateReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["db", "metric", "median", "mad", "n_sessions"])
        for (db, name) in sorted(agg.median):
            writer.writerow([db, name, repr(agg.median[(db, name)]),
                             repr(agg.mad[(db, name)]), agg.n_sessions])


# ---------------------------------------------------------------------------
# Statistical comparison
# ---------------------------------------------------------------------------


def one_sided_t_test(a: Sequence[float], b: Sequence[float],
                     alpha: float = 0.05) -> int:
    """Paired one-sided t-test at confidence 1 - alpha.

    Returns +1 when a statistically exceeds b, -1 for the opposite, 0 when
    indistinguishable. Zero-variance differences resolve by their sign.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two paired samples of equal length >= 2")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    d = a - b
    sd = float(np.std(d, ddof=1))
    mean = float(np.mean(d))
    if sd == 0.0:
        if mean > 0.0:
            return 1
        if mean < 0.0:
            return -1
        return 0
    t_stat = mean / (sd / math.sqrt(len(d)))
    df = len(d) - 1
    cdf = float(stdtr(df, t_stat))
    if 1.0 - cdf < alpha:
        return 1
    if cdf < alpha:
        return -1
    return 0
