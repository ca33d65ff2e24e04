"""Group maximum-differentiation pair search.

Given two models' scores over an unlabeled corpus, find, at each quality
level of the defender model, the pair the attacker separates most while the
defender considers the two items equal (within a tolerance). Surviving an
attack means the attacker found no pair the defender mis-ranks badly;
failing exposes the defender's blind spots without exhaustive labeling.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GmadConfig:
    """Level count and the defender-score closeness tolerance.

    ``level_tolerance`` is in defender-score units; None means 1% of the
    defender's corpus score range (scale-free default). ``corpus`` restricts
    the search to a subset of ids; None uses every scored id.
    """

    n_levels: int = 2
    level_tolerance: float | None = None
    corpus: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.level_tolerance is not None and not self.level_tolerance > 0.0:
            raise ValueError("level_tolerance must be > 0 when set")


@dataclass(frozen=True)
class GmadPair:
    level: int
    x_id: str
    y_id: str
    attacker_x: float
    attacker_y: float
    defender_x: float
    defender_y: float

    def __post_init__(self):
        if self.attacker_x < self.attacker_y:
            raise ValueError("pair must be oriented attacker_x >= attacker_y")


def quantile_level_bins(defender_scores: Mapping[str, float], n_levels: int,
                        corpus: Sequence[str] | None = None) -> list[list[str]]:
    """Partition the corpus into ``n_levels`` defender-score quantile bins.

    Ids are ordered by (score, id) and chunked as evenly as possible, so the
    binning is deterministic under score ties.
    """
    ids = sorted(corpus) if corpus is not None else sorted(defender_scores)
    missing = [i for i in ids if i not in defender_scores]
    if missing:
        raise ValueError(f"ids without defender scores: {missing[:5]}")
    ordered = sorted(ids, key=lambda i: (defender_scores[i], i))
    return [list(chunk) for chunk in np.array_split(np.array(ordered), n_levels)]


def _orient(i: str, j: str, attacker: Mapping[str, float]) -> tuple[str, str]:
    if attacker[i] > attacker[j]:
        return i, j
    if attacker[j] > attacker[i]:
        return j, i
    return (i, j) if i < j else (j, i)


def gmad_search(attacker_scores: Mapping[str, float],
                defender_scores: Mapping[str, float],
                cfg: GmadConfig) -> list[GmadPair]:
    """Exhaustive within-bin search for maximally-discriminating pairs.

    For each defender quantile bin, returns the pair maximizing
    attacker_x - attacker_y subject to |defender_x - defender_y| <=
    tolerance, ties broken by the lexicographically smallest (x_id, y_id).
    Bins with fewer than two items (or no pair within tolerance) are
    reported and skipped.
    """
    ids = list(cfg.corpus) if cfg.corpus is not None else sorted(defender_scores)
    if len(ids) < 2:
        raise ValueError("corpus must hold at least 2 items")
    for score_map, role in ((attacker_scores, "attacker"), (defender_scores, "defender")):
        missing = [i for i in ids if i not in score_map]
        if missing:
            raise ValueError(f"ids without {role} scores: {missing[:5]}")

    if cfg.level_tolerance is not None:
        tol = cfg.level_tolerance
    else:
        values = [defender_scores[i] for i in ids]
        tol = 0.01 * (max(values) - min(values))

    bins = quantile_level_bins(defender_scores, cfg.n_levels, ids)
    pairs: list[GmadPair] = []
    for level, members in enumerate(bins):
        if len(members) < 2:
            log.warning("gmad level %d skipped: only %d item(s)", level, len(members))
            continue
        best: tuple[float, str, str] | None = None
        members = sorted(members)
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = members[a], members[b]
                if abs(defender_scores[i] - defender_scores[j]) > tol:
                    continue
                x, y = _orient(i, j, attacker_scores)
                gap = attacker_scores[x] - attacker_scores[y]
                if best is None or gap > best[0] or (gap == best[0] and (x, y) < best[1:]):
                    best = (gap, x, y)
        if best is None:
            log.warning("gmad level %d skipped: no pair within tolerance %g", level, tol)
            continue
        _, x, y = best
        pairs.append(GmadPair(level=level, x_id=x, y_id=y,
                              attacker_x=attacker_scores[x], attacker_y=attacker_scores[y],
                              defender_x=defender_scores[x], defender_y=defender_scores[y]))
    return pairs


def pairs_to_csv(pairs: Sequence[GmadPair], path: str | Path,
                 attacker: str = "attacker", defender: str = "defender") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attacker", "defender", "level", "x_id", "y_id",
                         "attacker_x", "attacker_y", "defender_x", "defender_y"])
        for pr in pairs:
            writer.writerow([attacker, defender, pr.level, pr.x_id, pr.y_id,
                             repr(pr.attacker_x), repr(pr.attacker_y),
                             repr(pr.defender_x), repr(pr.defender_y)])


def load_score_file(path: str | Path) -> dict[str, float]:
    """Read an "id,score" CSV (no header) into a score map."""
    scores: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: expected 'id,score' rows, got {row!r}")
            scores[row[0]] = float(row[1])
    return scores


def save_score_file(scores: Mapping[str, float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for item_id in sorted(scores):
            writer.writerow([item_id, repr(float(scores[item_id]))])
