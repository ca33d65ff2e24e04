"""Pairwise training-set construction from annotated databases.

Rating scales differ across databases, so absolute opinion scores cannot be
pooled directly. Within one database, however, a pair of items yields a
scale-free supervisory signal: under a Thurstone-style observer model each
item's perceived quality is Gaussian around its opinion mean, so the
probability that one item beats the other is the standard normal CDF of the
standardized mean difference. Pairs sampled per database and concatenated
form one training set without any cross-database score realignment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .data import MOS, Database, FormatError


def std_normal_cdf(z):
    """Standard normal CDF; accepts a scalar or an ndarray.

    Backed by the erf-based evaluation in scipy.special (absolute error well
    below 1e-7 everywhere).
    """
    arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("std_normal_cdf requires finite input")
    out = ndtr(arr)
    if np.isscalar(z) or arr.ndim == 0:
        return float(out)
    return out


def thurstone_probability(mu_x: float, sigma_x: float,
                          mu_y: float, sigma_y: float) -> float:
    """Probability that item x is preferred to item y.

    Perceived quality of each item is modeled as Gaussian with the annotated
    mean and std, uncorrelated across items, so the preference probability is
    Phi((mu_x - mu_y) / sqrt(sigma_x^2 + sigma_y^2)). When both stds are zero
    the Gaussian model degenerates; the step-function limit applies:
    1 if mu_x > mu_y, 0 if mu_x < mu_y, 0.5 on ties.
    """
    for v in (mu_x, sigma_x, mu_y, sigma_y):
        if not math.isfinite(v):
            raise ValueError("thurstone_probability requires finite inputs")
    if sigma_x < 0.0 or sigma_y < 0.0:
        raise ValueError("sigma must be >= 0")
    denom = math.sqrt(sigma_x * sigma_x + sigma_y * sigma_y)
    if denom == 0.0:
        if mu_x > mu_y:
            return 1.0
        if mu_x < mu_y:
            return 0.0
        return 0.5
    return std_normal_cdf((mu_x - mu_y) / denom)


def uncertainty_label(sigma_x: float, sigma_y: float) -> int:
    """+1 when sigma_x >= sigma_y, else -1 (ties count as +1)."""
    if not (math.isfinite(sigma_x) and math.isfinite(sigma_y)):
        raise ValueError("uncertainty_label requires finite inputs")
    if sigma_x < 0.0 or sigma_y < 0.0:
        raise ValueError("sigma must be >= 0")
    return 1 if sigma_x >= sigma_y else -1


@dataclass(frozen=True)
class PairSample:
    """A training pair: two items of one database, preference probability p,
    and the uncertainty order label t."""

    x_id: str
    y_id: str
    db: str
    p: float
    t: int

    def __post_init__(self):
        if self.x_id == self.y_id:
            raise ValueError(f"pair of {self.x_id!r} with itself")
        if not (math.isfinite(self.p) and 0.0 <= self.p <= 1.0):
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.t not in (1, -1):
            raise ValueError(f"t must be +1 or -1, got {self.t}")


@dataclass
class TrainingSet:
    """Concatenated within-database pairs plus sampling provenance."""

    pairs: list[PairSample]
    counts: dict[str, int] = field(default_factory=dict)
    seeds: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)


def sample_pairs(db: Database, id_pool: frozenset[str] | set[str],
                 n: int, seed: int) -> list[PairSample]:
    """Sample ``n`` pairs of distinct items uniformly (with replacement) over
    unordered pairs from ``id_pool``, each annotated with its Thurstone
    preference probability and uncertainty label.

    The pool must be drawn from ``db`` and the database must already be in
    MOS polarity; sampling a raw DMOS database would silently invert every
    preference.
    """
    if db.polarity != MOS:
        raise ValueError(
            f"database {db.name!r} is {db.polarity}; normalize polarity before sampling"
        )
    known = db.ids()
    pool = sorted(id_pool)
    missing = set(pool) - known
    if missing:
        raise ValueError(f"ids not in database {db.name!r}: {sorted(missing)[:5]}")
    if len(pool) < 2:
        raise ValueError(f"id pool must hold >= 2 items, got {len(pool)}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")

    item_map = db.item_map()
    rng = np.random.default_rng(seed)
    m = len(pool)
    # ordered distinct index pairs, uniform; induces the uniform distribution
    # over unordered pairs
    i_idx = rng.integers(0, m, size=n)
    j_idx = rng.integers(0, m - 1, size=n)
    j_idx = j_idx + (j_idx >= i_idx)

    out: list[PairSample] = []
    for i, j in zip(i_idx, j_idx):
        x, y = item_map[pool[i]], item_map[pool[j]]
        p = thurstone_probability(x.mu, x.sigma, y.mu, y.sigma)
        t = uncertainty_label(x.sigma, y.sigma)
        out.append(PairSample(x_id=x.id, y_id=y.id, db=db.name, p=p, t=t))
    return out


def combine(per_db_pairs: list[list[PairSample]],
            seeds: dict[str, int] | None = None) -> TrainingSet:
    """Concatenate per-database pair lists into one training set.

    Pairs are always within-database by construction; this records per-database
    counts (and the sampling seeds, when given) as provenance.
    """
    pairs: list[PairSample] = []
    counts: dict[str, int] = {}
    for lst in per_db_pairs:
        for pair in lst:
            counts[pair.db] = counts.get(pair.db, 0) + 1
        pairs.extend(lst)
    return TrainingSet(pairs=pairs, counts=counts, seeds=dict(seeds or {}))


# ---------------------------------------------------------------------------
# Pair file format (see docs/formats.md)
# ---------------------------------------------------------------------------


def save_pairs(ts: TrainingSet, path: str | Path) -> None:
    path = Path(path)
    header = {"pairs": len(ts.pairs), "counts": dict(sorted(ts.counts.items())),
              "seeds": dict(sorted(ts.seeds.items()))}
    lines = [json.dumps(header, separators=(",", ":"))]
    for pr in ts.pairs:
        lines.append(json.dumps(
            {"x_id": pr.x_id, "y_id": pr.y_id, "db": pr.db, "p": pr.p, "t": pr.t},
            separators=(",", ":")))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_pairs(path: str | Path) -> TrainingSet:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty pair file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON header: {exc}", line=1) from None
    pairs: list[PairSample] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON pair record: {exc}", line=lineno) from None
        try:
            pairs.append(PairSample(x_id=rec["x_id"], y_id=rec["y_id"], db=rec["db"],
                                    p=float(rec["p"]), t=int(rec["t"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad pair record: {exc}", line=lineno) from None
    counts = {str(k): int(v) for k, v in header.get("counts", {}).items()}
    seeds = {str(k): int(v) for k, v in header.get("seeds", {}).items()}
    return TrainingSet(pairs=pairs, counts=counts, seeds=seeds)
