"""Mini-batch optimization of scorer parameters with Adam.

Follows a warm-up protocol: for the first ``warmup_epochs`` only the final
two-output head receives updates (upstream gradients are computed but
masked), with a larger batch size; afterwards the whole parameter set is
fine-tuned with a smaller batch. The learning rate decays stepwise by
``decay_factor`` every ``decay_every`` epochs. Adam moments for newly
unmasked tensors start fresh at the phase switch; each tensor keeps its own
step count.

Runs are deterministic per seed: seeded shuffles, fixed-order batch
reduction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .losses import PAIRWISE_KINDS, LossConfig, pairwise_terms
from .pairs import TrainingSet
from .scorer import Architecture, ScorerParams, backward_batch, forward_batch, init_params


class NumericError(RuntimeError):
    """Non-finite loss or gradient during optimization."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    warmup_epochs: int = 3
    batch_size_warmup: int = 128
    batch_size_main: int = 32
    lr0: float = 1e-4
    decay_factor: float = 10.0
    decay_every: int = 3
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs must be <= epochs")
        if self.batch_size_warmup < 1 or self.batch_size_main < 1:
            raise ValueError("batch sizes must be >= 1")
        if not self.lr0 > 0.0:
            raise ValueError("lr0 must be > 0")
        if not self.decay_factor > 1.0:
            raise ValueError("decay_factor must be > 1")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0.0:
            raise ValueError("clip_norm must be > 0 when set")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.decay_factor ** (-(epoch // self.decay_every))


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    lr: float
    batch_size: int
    mean_loss: float


@dataclass
class TrainReport:
    rows: list[EpochRow]
    params: ScorerParams
    seed: int
    loss_kind: str
    initial_loss: float | None = None

    @property
    def final_loss(self) -> float | None:
        return self.rows[-1].mean_loss if self.rows else None


def write_epoch_log(report: TrainReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "batch_size", "mean_loss"])
        for row in report.rows:
            writer.writerow([row.epoch, repr(row.lr), row.batch_size, repr(row.mean_loss)])


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected first/second moments, one slot per parameter tensor."""

    betas: tuple[float, float]
    eps: float
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: list[int]

    def copy(self) -> "AdamState":
        return AdamState(betas=self.betas, eps=self.eps,
                         m=[a.copy() for a in self.m],
                         v=[a.copy() for a in self.v],
                         step=list(self.step))


def init_adam(params: ScorerParams, betas=(0.9, 0.999), eps=1e-8) -> AdamState:
    tensors = params.tensors()
    return AdamState(betas=tuple(betas), eps=float(eps),
                     m=[np.zeros_like(a) for a in tensors],
                     v=[np.zeros_like(a) for a in tensors],
                     step=[0] * len(tensors))


def adam_step(params: ScorerParams,
              grads: tuple[list[np.ndarray], list[np.ndarray]],
              state: AdamState, lr: float,
              update: list[bool] | None = None) -> tuple[ScorerParams, AdamState]:
    """One Adam update; tensors whose ``update`` flag is False keep both
    their values and their optimizer state untouched."""
    d_weights, d_biases = grads
    grad_tensors: list[np.ndarray] = []
    for gw, gb in zip(d_weights, d_biases):
        grad_tensors.append(gw)
        grad_tensors.append(gb)
    new_params = params.copy()
    tensors = new_params.tensors()
    if len(grad_tensors) != len(tensors):
        raise ValueError("gradient structure does not match parameters")
    if update is None:
        update = [True] * len(tensors)
    b1, b2 = state.betas
    new_state = state.copy()
    for i, (theta, g) in enumerate(zip(tensors, grad_tensors)):
        if not update[i]:
            continue
        if theta.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {theta.shape}")
        t = new_state.step[i] + 1
        new_state.step[i] = t
        new_state.m[i] = b1 * new_state.m[i] + (1.0 - b1) * g
        new_state.v[i] = b2 * new_state.v[i] + (1.0 - b2) * g * g
        m_hat = new_state.m[i] / (1.0 - b1 ** t)
        v_hat = new_state.v[i] / (1.0 - b2 ** t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, new_state


def _head_only_mask(params: ScorerParams) -> list[bool]:
    n_tensors = 2 * len(params.weights)
    mask = [False] * n_tensors
    mask[-2] = mask[-1] = True
    return mask


def _clip_grads(d_weights, d_biases, clip_norm):
    total = 0.0
    for g in d_weights + d_biases:
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > clip_norm:
        scale = clip_norm / norm
        d_weights = [g * scale for g in d_weights]
        d_biases = [g * scale for g in d_biases]
    return d_weights, d_biases


# ---------------------------------------------------------------------------
# Pairwise training
# ---------------------------------------------------------------------------


def _resolve_pairs(train_set: TrainingSet, items: Mapping):
    ids = sorted({pid for pr in train_set.pairs for pid in (pr.x_id, pr.y_id)})
    for pid in ids:
        if pid not in items:
            raise ValueError(f"pair references unknown item id {pid!r}")
    index = {pid: k for k, pid in enumerate(ids)}
    x = np.stack([np.asarray(items[pid].features, dtype=np.float64) for pid in ids])
    xi = np.array([index[pr.x_id] for pr in train_set.pairs])
    yi = np.array([index[pr.y_id] for pr in train_set.pairs])
    p = np.array([pr.p for pr in train_set.pairs])
    t = np.array([pr.t for pr in train_set.pairs])
    return x, xi, yi, p, t


def evaluate_pairwise_loss(train_set: TrainingSet, items: Mapping,
                           params: ScorerParams, cfg: LossConfig,
                           loss_kind: str = "fidelity+hinge") -> float:
    """Mean per-pair loss over the whole set, no updates."""
    x, xi, yi, p, t = _resolve_pairs(train_set, items)
    idx = np.concatenate([xi, yi])
    f, sg, _ = forward_batch(params, x[idx])
    k = len(xi)
    loss_vec, *_ = pairwise_terms(loss_kind, f[:k], sg[:k], f[k:], sg[k:], p, t, cfg)
    return float(np.mean(loss_vec))


def train(train_set: TrainingSet, items: Mapping, arch: Architecture,
          cfg: TrainConfig, loss_kind: str = "fidelity+hinge") -> TrainReport:
    """Optimize a scorer on sampled pairs.

    Every pair id must resolve through ``items``. Aborts with a diagnostic
    on a non-finite batch loss; parameters are checked finite each epoch.
    """
    if loss_kind not in PAIRWISE_KINDS:
        raise ValueError(f"unknown pairwise loss kind {loss_kind!r}")
    if not train_set.pairs:
        raise ValueError("empty training set")
    x, xi, yi, p, t = _resolve_pairs(train_set, items)
    n = len(xi)

    params = init_params(arch, int(np.random.SeedSequence([cfg.seed, 0]).generate_state(1)[0]))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    state = init_adam(params, cfg.adam_betas, cfg.adam_eps)
    initial_loss = evaluate_pairwise_loss(train_set, items, params, cfg.loss, loss_kind)

    rows: list[EpochRow] = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        warm = epoch < cfg.warmup_epochs
        batch_size = cfg.batch_size_warmup if warm else cfg.batch_size_main
        mask = _head_only_mask(params) if warm else None
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for b_start in range(0, n, batch_size):
            sel = perm[b_start:b_start + batch_size]
            k = len(sel)
            idx = np.concatenate([xi[sel], yi[sel]])
            f, sg, cache = forward_batch(params, x[idx])
            loss_vec, dfx, dsx, dfy, dsy = pairwise_terms(
                loss_kind, f[:k], sg[:k], f[k:], sg[k:], p[sel], t[sel], cfg.loss)
            if not np.all(np.isfinite(loss_vec)):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting {b_start} "
                    f"(loss kind {loss_kind!r})")
            d_f = np.concatenate([dfx, dfy]) / k
            d_s = np.concatenate([dsx, dsy]) / k
            d_weights, d_biases = backward_batch(params, cache, d_f, d_s)
            if cfg.clip_norm is not None:
                d_weights, d_biases = _clip_grads(d_weights, d_biases, cfg.clip_norm)
            params, state = adam_step(params, (d_weights, d_biases), state, lr, update=mask)
            loss_sum += float(loss_vec.sum())
        for tensor in params.tensors():
            if not np.all(np.isfinite(tensor)):
                raise NumericError(f"non-finite parameters after epoch {epoch}")
        rows.append(EpochRow(epoch=epoch, lr=lr, batch_size=batch_size,
                             mean_loss=loss_sum / n))
    return TrainReport(rows=rows, params=params, seed=cfg.seed,
                       loss_kind=loss_kind, initial_loss=initial_loss)


def train_regression(items_features: np.ndarray, targets: np.ndarray,
                     arch: Architecture, cfg: TrainConfig) -> TrainReport:
    """MSE regression of the quality head onto per-item targets.

    Drives the same Adam/warm-up/schedule machinery as pairwise training;
    used by the per-database and rescaled-MOS ablation baselines. The std
    head receives zero gradient.
    """
    x = np.asarray(items_features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = x.shape[0]
    if n == 0 or targets.shape != (n,):
        raise ValueError("need one target per item")

    params = init_params(arch, int(np.random.SeedSequence([cfg.seed, 0]).generate_state(1)[0]))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    state = init_adam(params, cfg.adam_betas, cfg.adam_eps)
    f0, _, _ = forward_batch(params, x)
    initial_loss = float(np.mean((f0 - targets) ** 2))

    rows: list[EpochRow] = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        warm = epoch < cfg.warmup_epochs
        batch_size = cfg.batch_size_warmup if warm else cfg.batch_size_main
        mask = _head_only_mask(params) if warm else None
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for b_start in range(0, n, batch_size):
            sel = perm[b_start:b_start + batch_size]
            k = len(sel)
            f, _, cache = forward_batch(params, x[sel])
            residual = f - targets[sel]
            loss_vec = residual * residual
            if not np.all(np.isfinite(loss_vec)):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting {b_start} (mse)")
            d_f = 2.0 * residual / k
            d_weights, d_biases = backward_batch(params, cache, d_f, np.zeros(k))
            if cfg.clip_norm is not None:
                d_weights, d_biases = _clip_grads(d_weights, d_biases, cfg.clip_norm)
            params, state = adam_step(params, (d_weights, d_biases), state, lr, update=mask)
            loss_sum += float(loss_vec.sum())
        for tensor in params.tensors():
            if not np.all(np.isfinite(tensor)):
                raise NumericError(f"non-finite parameters after epoch {epoch}")
        rows.append(EpochRow(epoch=epoch, lr=lr, batch_size=batch_size,
                             mean_loss=loss_sum / n))
    return TrainReport(rows=rows, params=params, seed=cfg.seed,
                       loss_kind="mse", initial_loss=initial_loss)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

_FD_STEP = 1e-5
# Central differences are meaningless where the loss is not differentiable;
# draws landing within these bands of the hinge kink, the probability clamp,
# or a ReLU threshold are rejected and resampled.
_HINGE_GUARD = 1e-3
_Z_GUARD = 3.0
_RELU_GUARD = 1e-4


def _random_features(arch: Architecture, rng: np.random.Generator) -> np.ndarray:
    if arch.kind == "bilinear_mlp":
        return rng.normal(0.0, 1.0, size=(arch.spatial, arch.channels))
    return rng.normal(0.0, 1.0, size=arch.input_dim)


def _pair_pipeline_loss(params: ScorerParams, x_feat, y_feat, p, t,
                        cfg: LossConfig) -> float:
    f, sg, _ = forward_batch(params, np.stack([x_feat, y_feat]))
    loss_vec, *_ = pairwise_terms("fidelity+hinge", f[:1], sg[:1], f[1:], sg[1:],
                                  np.array([p]), np.array([t]), cfg)
    return float(loss_vec[0])


def _well_conditioned(params: ScorerParams, x_feat, y_feat, t,
                      cfg: LossConfig) -> bool:
    f, sg, cache = forward_batch(params, np.stack([x_feat, y_feat]))
    for pre in cache.pre_acts:
        if np.min(np.abs(pre)) < _RELU_GUARD:
            return False
    z = (f[0] - f[1]) / math.sqrt(sg[0] ** 2 + sg[1] ** 2)
    if abs(z) > _Z_GUARD:
        return False
    if abs(cfg.margin - t * (sg[0] - sg[1])) < _HINGE_GUARD:
        return False
    return True


def grad_check(arch: Architecture, seed: int, n_trials: int = 3) -> float:
    """Max relative error between the full-pipeline analytic gradient (pair
    loss -> model outputs -> parameters) and central finite differences on
    random pairs.

    Relative error is norm-based, ||analytic - numeric|| / max(||analytic||,
    ||numeric||): elementwise ratios are ill-posed at near-zero entries.
    """
    cfg = LossConfig()
    worst = 0.0
    for trial in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, trial]))
        params = init_params(arch, int(rng.integers(2 ** 31)))
        for b in params.biases:
            b += rng.normal(0.0, 0.1, size=b.shape)

        for _ in range(200):
            x_feat = _random_features(arch, rng)
            y_feat = _random_features(arch, rng)
            p = float(rng.uniform(0.05, 0.95))
            t = int(rng.choice([-1, 1]))
            if _well_conditioned(params, x_feat, y_feat, t, cfg):
                break
        else:
            raise RuntimeError("could not draw a well-conditioned gradient-check pair")

        f, sg, cache = forward_batch(params, np.stack([x_feat, y_feat]))
        _, dfx, dsx, dfy, dsy = pairwise_terms(
            "fidelity+hinge", f[:1], sg[:1], f[1:], sg[1:],
            np.array([p]), np.array([t]), cfg)
        d_weights, d_biases = backward_batch(
            params, cache, np.concatenate([dfx, dfy]), np.concatenate([dsx, dsy]))
        analytic = np.concatenate(
            [g.ravel() for pair_g in zip(d_weights, d_biases) for g in pair_g])

        numeric = np.empty_like(analytic)
        pos = 0
        for wi in range(len(params.weights)):
            for tensor_name in ("weights", "biases"):
                tensor = getattr(params, tensor_name)[wi]
                flat = tensor.ravel()
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + _FD_STEP
                    up = _pair_pipeline_loss(params, x_feat, y_feat, p, t, cfg)
                    flat[j] = orig - _FD_STEP
                    down = _pair_pipeline_loss(params, x_feat, y_feat, p, t, cfg)
                    flat[j] = orig
                    numeric[pos] = (up - down) / (2.0 * _FD_STEP)
                    pos += 1
        denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric)) / denom)
    return worst
