"""Independent reference implementations used only to cross-check the
library. Everything here is deliberately written along a different route
than the production code."""

from __future__ import annotations

import itertools
import math

import mpmath

mpmath.mp.dps = 30


def phi_highprec(z: float) -> float:
    """Standard normal CDF via arbitrary-precision erf."""
    return float(mpmath.ncdf(z))


def rank_by_counting(values) -> list[float]:
    """1-based average ranks computed by pairwise counting."""
    out = []
    for x in values:
        less = sum(1 for o in values if o < x)
        equal = sum(1 for o in values if o == x)
        out.append(less + (equal + 1) / 2.0)
    return out


def pearson_by_sums(x, y) -> float:
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def srcc_brute(pred, truth) -> float:
    """Rank-then-Pearson along the counting route."""
    return pearson_by_sums(rank_by_counting(pred), rank_by_counting(truth))


def srcc_d2(pred, truth) -> float:
    """The 1 - 6*sum(d^2)/(n(n^2-1)) shortcut; valid only without ties."""
    rx = rank_by_counting(pred)
    ry = rank_by_counting(truth)
    n = len(rx)
    d2 = sum((a - b) ** 2 for a, b in zip(rx, ry))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def gmad_brute(attacker: dict, defender: dict, bins: list[list[str]],
               tolerance: float) -> list[tuple[int, str, str]]:
    """Exhaustive search over oriented within-bin pairs.

    Orientation puts the higher attacker score first (id order on attacker
    ties); the winner maximizes the attacker gap, then takes the smallest
    (x, y) tuple.
    """
    winners = []
    for level, members in enumerate(bins):
        candidates = []
        for i, j in itertools.permutations(sorted(members), 2):
            if attacker[i] < attacker[j]:
                continue
            if attacker[i] == attacker[j] and i > j:
                continue
            if abs(defender[i] - defender[j]) > tolerance:
                continue
            candidates.append((-(attacker[i] - attacker[j]), i, j))
        if candidates:
            gap_neg, x, y = min(candidates)
            winners.append((level, x, y))
    return winners


def fd_gradient(fn, params_tensors: list, h: float = 1e-5) -> list:
    """Central finite differences of scalar fn() w.r.t. a list of arrays,
    perturbing entries in place."""
    grads = []
    for tensor in params_tensors:
        g = tensor.copy().astype(float)
        flat_t = tensor.ravel()
        flat_g = g.ravel()
        for k in range(flat_t.size):
            orig = flat_t[k]
            flat_t[k] = orig + h
            up = fn()
            flat_t[k] = orig - h
            down = fn()
            flat_t[k] = orig
            flat_g[k] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads
