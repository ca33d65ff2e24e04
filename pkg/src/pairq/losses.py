"""Pair losses and their exact gradients with respect to model outputs.

The model's preference probability for a pair mirrors the ground-truth
construction: Phi of the score difference standardized by the predicted
stds. The fidelity loss measures similarity between the target and model
Bernoulli distributions; unlike cross entropy it is bounded and reaches
exactly zero at a perfect match, which matters for targets near 0.5. A
hinge term supervises the predicted stds through per-pair order labels,
pinning the scale that the probability alone leaves free (scaling both
heads by any positive factor leaves the probability unchanged).

Baseline losses used in ablations (plain MSE regression, MSE after linear
re-scaling, binary and continuous-label cross entropy) live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .data import Database
from .scorer import ModelOutput

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

DEFAULT_PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Hinge margin, hinge weight, and the model-probability clamp.

    ``prob_clamp`` keeps the model probability inside [eps, 1-eps]; the
    fidelity and cross-entropy gradients are singular at 0 and 1. Only the
    model side is clamped — ground-truth probabilities may legitimately be
    exactly 0 or 1 in the zero-variance convention.
    """

    margin: float = 0.025
    hinge_weight: float = 1.0
    prob_clamp: float = DEFAULT_PROB_CLAMP

    def __post_init__(self):
        if not self.margin > 0.0:
            raise ValueError("margin must be > 0")
        if self.hinge_weight < 0.0:
            raise ValueError("hinge_weight must be >= 0")
        if not 0.0 < self.prob_clamp < 0.5:
            raise ValueError("prob_clamp must be in (0, 0.5)")


@dataclass(frozen=True)
class PairGrads:
    """d(loss)/d(f_x, sigma_x, f_y, sigma_y) for one pair."""

    f_x: float
    sigma_x: float
    f_y: float
    sigma_y: float


def _phi_pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def probability_terms(f_x, s_x, f_y, s_y, prob_clamp=DEFAULT_PROB_CLAMP):
    """Vectorized model probability and its partials.

    Returns (p_w, dp/df_x, dp/ds_x, dp/df_y, dp/ds_y). Where the raw
    probability falls outside [eps, 1-eps] it is clamped and the partials
    are zero (hard clamp).
    """
    f_x = np.asarray(f_x, dtype=np.float64)
    s_x = np.asarray(s_x, dtype=np.float64)
    f_y = np.asarray(f_y, dtype=np.float64)
    s_y = np.asarray(s_y, dtype=np.float64)
    var = s_x * s_x + s_y * s_y
    denom = np.sqrt(var)
    z = (f_x - f_y) / denom
    raw = ndtr(z)
    clamped = np.clip(raw, prob_clamp, 1.0 - prob_clamp)
    live = (raw == clamped)

    pdf = _phi_pdf(z) * live
    d_fx = pdf / denom
    d_fy = -d_fx
    common = -pdf * z / var
    d_sx = common * s_x
    d_sy = common * s_y
    return clamped, d_fx, d_sx, d_fy, d_sy


def model_probability(out_x: ModelOutput, out_y: ModelOutput,
                      prob_clamp: float = DEFAULT_PROB_CLAMP) -> float:
    """Model-side preference probability for a pair, clamped to
    [eps, 1-eps]."""
    if out_x.sigma <= 0.0 or out_y.sigma <= 0.0:
        raise ValueError("model sigma must be > 0")
    p_w, *_ = probability_terms(out_x.f, out_x.sigma, out_y.f, out_y.sigma, prob_clamp)
    return float(p_w)


def fidelity_loss(p: float, p_w: float) -> float:
    """1 - sqrt(p*p_w) - sqrt((1-p)(1-p_w)): in [0, 1], zero iff p_w == p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if not 0.0 <= p_w <= 1.0:
        raise ValueError(f"p_w must be in [0, 1], got {p_w}")
    # single subtraction keeps the swap identity l(p,pw) == l(1-p,1-pw) exact
    val = 1.0 - (math.sqrt(p * p_w) + math.sqrt((1.0 - p) * (1.0 - p_w)))
    return max(0.0, val)


def fidelity_grad(p: float, p_w: float) -> float:
    """d/d(p_w) of the fidelity loss; requires p_w clamped away from {0, 1}."""
    if not 0.0 < p_w < 1.0:
        raise ValueError(f"p_w must be in (0, 1), got {p_w}")
    return -0.5 * (math.sqrt(p / p_w) - math.sqrt((1.0 - p) / (1.0 - p_w)))


def hinge_loss(sigma_x: float, sigma_y: float, t: int, margin: float) -> float:
    """max(0, margin - t * (sigma_x - sigma_y)); subgradient 0 at the kink."""
    if t not in (1, -1):
        raise ValueError(f"t must be +1 or -1, got {t}")
    if not margin > 0.0:
        raise ValueError("margin must be > 0")
    return max(0.0, margin - t * (sigma_x - sigma_y))


def pair_loss(out_x: ModelOutput, out_y: ModelOutput, p: float, t: int,
              cfg: LossConfig) -> tuple[float, PairGrads]:
    """Fidelity plus weighted hinge for one pair, with the exact gradient
    chained through the probability, the z-score, and the hinge."""
    p_w, d_fx, d_sx, d_fy, d_sy = probability_terms(
        out_x.f, out_x.sigma, out_y.f, out_y.sigma, cfg.prob_clamp)
    p_w = float(p_w)
    lf = fidelity_loss(p, p_w)
    g = fidelity_grad(p, p_w)
    lh = hinge_loss(out_x.sigma, out_y.sigma, t, cfg.margin)
    hinge_active = cfg.margin - t * (out_x.sigma - out_y.sigma) > 0.0
    h = (-float(t) if hinge_active else 0.0) * cfg.hinge_weight
    loss = lf + cfg.hinge_weight * lh
    grads = PairGrads(f_x=g * float(d_fx), sigma_x=g * float(d_sx) + h,
                      f_y=g * float(d_fy), sigma_y=g * float(d_sy) - h)
    return loss, grads


def batch_loss(batch: list[tuple], cfg: LossConfig) -> float:
    """Mean pair loss over a batch of (pair, out_x, out_y) entries."""
    if not batch:
        raise ValueError("empty batch")
    total = 0.0
    for pair, out_x, out_y in batch:
        loss, _ = pair_loss(out_x, out_y, pair.p, pair.t, cfg)
        total += loss
    return total / len(batch)


# ---------------------------------------------------------------------------
# Ablation baselines
# ---------------------------------------------------------------------------


def mse_loss(f: float, mos: float) -> float:
    return (f - mos) ** 2


def _cross_entropy(p_w: float, r: float) -> float:
    if not 0.0 < p_w < 1.0:
        raise ValueError(f"p_w must be in (0, 1), got {p_w}")
    return -r * math.log(p_w) - (1.0 - r) * math.log(1.0 - p_w)


def binary_ce_loss(p_w: float, r: int) -> float:
    """Cross entropy against a hard 0/1 preference label."""
    if r not in (0, 1):
        raise ValueError(f"binary label must be 0 or 1, got {r}")
    return _cross_entropy(p_w, float(r))


def continuous_ce_loss(p_w: float, p: float) -> float:
    """Cross entropy against the continuous preference probability."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    return _cross_entropy(p_w, p)


def rescale_mos(db: Database, lo: float, hi: float) -> Database:
    """Map the database's opinion means affinely onto [lo, hi].

    Stds are scaled by the same slope magnitude so they stay unit-consistent
    with the rescaled means. A constant-mu database cannot be rescaled.
    """
    if not hi > lo:
        raise ValueError("need hi > lo")
    mus = np.array([it.mu for it in db.items])
    span = float(mus.max() - mus.min())
    if span == 0.0:
        raise ValueError(f"database {db.name!r} has constant mu; rescale undefined")
    slope = (hi - lo) / span
    offset = lo - slope * float(mus.min())
    items = [replace(it, mu=slope * it.mu + offset, sigma=slope * it.sigma)
             for it in db.items]
    return Database(name=db.name, scenario=db.scenario, polarity=db.polarity, items=items)


# ---------------------------------------------------------------------------
# Vectorized per-pair terms for the training loop
# ---------------------------------------------------------------------------

PAIRWISE_KINDS = ("fidelity+hinge", "fidelity-only", "binary-ce", "continuous-ce")


def pairwise_terms(kind: str, f_x, s_x, f_y, s_y, p, t, cfg: LossConfig):
    """Per-pair losses and output gradients for one mini-batch.

    Arrays in, arrays out: (loss, d_fx, d_sx, d_fy, d_sy), each shaped like
    the inputs. Matches the scalar ``pair_loss`` path exactly for the
    fidelity kinds. Cross-entropy kinds disable the hinge; the binary kind
    derives its hard label from p (r = 1 iff p >= 0.5, equivalent to
    comparing the opinion means).
    """
    if kind not in PAIRWISE_KINDS:
        raise ValueError(f"unknown pairwise loss kind {kind!r}")
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    p_w, d_fx, d_sx, d_fy, d_sy = probability_terms(f_x, s_x, f_y, s_y, cfg.prob_clamp)

    if kind in ("fidelity+hinge", "fidelity-only"):
        loss = 1.0 - (np.sqrt(p * p_w) + np.sqrt((1.0 - p) * (1.0 - p_w)))
        loss = np.maximum(0.0, loss)
        g = -0.5 * (np.sqrt(p / p_w) - np.sqrt((1.0 - p) / (1.0 - p_w)))
    elif kind == "binary-ce":
        r = (p >= 0.5).astype(np.float64)
        loss = -r * np.log(p_w) - (1.0 - r) * np.log(1.0 - p_w)
        g = -r / p_w + (1.0 - r) / (1.0 - p_w)
    else:  # continuous-ce
        loss = -p * np.log(p_w) - (1.0 - p) * np.log(1.0 - p_w)
        g = -p / p_w + (1.0 - p) / (1.0 - p_w)

    d_fx = g * d_fx
    d_sx = g * d_sx
    d_fy = g * d_fy
    d_sy = g * d_sy

    if kind == "fidelity+hinge" and cfg.hinge_weight > 0.0:
        s_x = np.asarray(s_x, dtype=np.float64)
        s_y = np.asarray(s_y, dtype=np.float64)
        gap = cfg.margin - t * (s_x - s_y)
        active = gap > 0.0
        loss = loss + cfg.hinge_weight * np.maximum(0.0, gap)
        h = cfg.hinge_weight * t * active
        d_sx = d_sx - h
        d_sy = d_sy + h
    return loss, d_fx, d_sx, d_fy, d_sy
