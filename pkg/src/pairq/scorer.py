"""Two-headed differentiable scorers: a quality head and a positive-std head.

Plain numpy implementations of three architectures (linear, MLP with ReLU,
and bilinear-pooled MLP for map-shaped features), sharing one code path.
The second head passes through an overflow-safe softplus plus a small floor
so the predicted std is strictly positive; both streams of a pair reuse the
same parameter set. Gradients are exact reverse-mode, computed from cached
forward activations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

ARCH_KINDS = ("linear", "mlp", "bilinear_mlp")

# Added after softplus so sigma stays bounded away from zero even when the
# std head saturates negative; pair probabilities divide by sigma.
DEFAULT_SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class Architecture:
    """Shape of a scorer: feature input spec plus hidden layer sizes.

    linear / mlp consume flat vectors of length ``input_dim``;
    bilinear_mlp consumes (spatial, channels) maps, pools them to a
    channels^2 vector, then applies the MLP stack.
    """

    kind: str
    input_dim: int = 0
    spatial: int = 0
    channels: int = 0
    hidden_sizes: tuple[int, ...] = ()
    sigma_floor: float = DEFAULT_SIGMA_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.kind not in ARCH_KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be >= 1")
        if self.kind == "bilinear_mlp":
            if self.spatial < 1 or self.channels < 1:
                raise ValueError("bilinear_mlp needs spatial >= 1 and channels >= 1")
        else:
            if self.input_dim < 1:
                raise ValueError(f"{self.kind} needs input_dim >= 1")
            if self.kind == "linear" and self.hidden_sizes:
                raise ValueError("linear architecture takes no hidden layers")
        if not 0.0 <= self.sigma_floor < 1.0:
            raise ValueError("sigma_floor must be in [0, 1)")

    @property
    def feature_ndim(self) -> int:
        return 2 if self.kind == "bilinear_mlp" else 1

    @property
    def stack_input_dim(self) -> int:
        """Width of the first dense layer's input (after pooling, if any)."""
        if self.kind == "bilinear_mlp":
            return self.channels * self.channels
        return self.input_dim

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every dense layer, head included."""
        dims = []
        fan_in = self.stack_input_dim
        for h in self.hidden_sizes:
            dims.append((fan_in, h))
            fan_in = h
        dims.append((fan_in, 2))
        return dims

    def expects(self, features: np.ndarray) -> bool:
        if self.kind == "bilinear_mlp":
            return features.shape[-2:] == (self.spatial, self.channels)
        return features.shape[-1:] == (self.input_dim,)


@dataclass
class ScorerParams:
    """All weights of one scorer; ``weights[i]`` has shape (out, in)."""

    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        dims = self.arch.layer_dims()
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ValueError("layer count does not match architecture")
        for (fan_in, fan_out), w, b in zip(dims, self.weights, self.biases):
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ValueError(
                    f"expected shapes {(fan_out, fan_in)}/{(fan_out,)}, "
                    f"got {w.shape}/{b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameter values")

    def copy(self) -> "ScorerParams":
        return ScorerParams(arch=self.arch,
                            weights=[w.copy() for w in self.weights],
                            biases=[b.copy() for b in self.biases])

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def tensors(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...]; views, not copies."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class ForwardCache:
    """Activations a backward pass needs; tied to one forward call."""

    owner: "ScorerParams"             # the exact parameters that produced it
    stack_input: np.ndarray           # (n, stack_input_dim), post pooling
    pre_acts: list[np.ndarray]        # hidden pre-activations
    head_raw: np.ndarray              # (n, 2) raw head outputs


@dataclass
class ModelOutput:
    """Per-item prediction: quality f and positive uncertainty sigma."""

    f: float
    sigma: float
    cache: ForwardCache


def init_params(arch: Architecture, seed: int) -> ScorerParams:
    """He-initialized weights (zero-mean Gaussian, variance 2/fan_in) and
    zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_dims():
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ScorerParams(arch=arch, weights=weights, biases=biases)


def zero_grads(params: ScorerParams) -> tuple[list[np.ndarray], list[np.ndarray]]:
    return ([np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases])


def bilinear_pool(z: np.ndarray) -> np.ndarray:
    """Second-order pooling of one (s, c) map: row-major flattening of z^T z."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"expected a 2-D (s, c) map, got ndim={z.ndim}")
    return (z.T @ z).ravel()


def softplus(u):
    """ln(1 + e^u), overflow-safe for any finite u; scalar or ndarray."""
    out = np.logaddexp(0.0, u)
    if np.isscalar(u):
        return float(out)
    return out


def _stack_input(arch: Architecture, x: np.ndarray) -> np.ndarray:
    """Batch features -> dense-stack input, pooling maps if needed."""
    if arch.kind == "bilinear_mlp":
        if x.ndim != 3 or x.shape[1:] != (arch.spatial, arch.channels):
            raise ValueError(
                f"expected batch of ({arch.spatial}, {arch.channels}) maps, "
                f"got shape {x.shape}")
        pooled = np.einsum("nsc,nsd->ncd", x, x)
        return pooled.reshape(x.shape[0], arch.channels * arch.channels)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ValueError(f"expected batch of {arch.input_dim}-vectors, got shape {x.shape}")
    return x


def forward_batch(params: ScorerParams,
                  x: np.ndarray) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Run the scorer on a batch of features.

    Returns (f, sigma, cache) with f and sigma of shape (n,); sigma is
    softplus(raw) + sigma_floor, strictly positive.
    """
    arch = params.arch
    a = _stack_input(arch, np.asarray(x, dtype=np.float64))
    stack_input = a
    pre_acts: list[np.ndarray] = []
    n_hidden = len(arch.hidden_sizes)
    for li in range(n_hidden):
        z = a @ params.weights[li].T + params.biases[li]
        pre_acts.append(z)
        a = np.maximum(z, 0.0)
    head_raw = a @ params.weights[n_hidden].T + params.biases[n_hidden]
    f = head_raw[:, 0]
    sigma = softplus(head_raw[:, 1]) + arch.sigma_floor
    cache = ForwardCache(owner=params, stack_input=stack_input,
                         pre_acts=pre_acts, head_raw=head_raw)
    return f, sigma, cache


def backward_batch(params: ScorerParams, cache: ForwardCache,
                   d_f: np.ndarray, d_sigma: np.ndarray
                   ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradients of sum_i (d_f[i]*f_i + d_sigma[i]*sigma_i) w.r.t. all
    parameters, using the cached activations."""
    if cache.owner is not params:
        raise ValueError("cache does not belong to these parameters")
    n_hidden = len(params.arch.hidden_sizes)
    d_head = np.stack(
        [np.asarray(d_f, dtype=np.float64),
         np.asarray(d_sigma, dtype=np.float64) * expit(cache.head_raw[:, 1])],
        axis=1)

    acts = [cache.stack_input]
    for z in cache.pre_acts:
        acts.append(np.maximum(z, 0.0))

    d_weights = [np.empty(0)] * (n_hidden + 1)
    d_biases = [np.empty(0)] * (n_hidden + 1)
    d_weights[n_hidden] = d_head.T @ acts[n_hidden]
    d_biases[n_hidden] = d_head.sum(axis=0)
    d_a = d_head @ params.weights[n_hidden]
    for li in range(n_hidden - 1, -1, -1):
        d_z = d_a * (cache.pre_acts[li] > 0.0)
        d_weights[li] = d_z.T @ acts[li]
        d_biases[li] = d_z.sum(axis=0)
        if li > 0:
            d_a = d_z @ params.weights[li]
    return d_weights, d_biases


def forward(params: ScorerParams, x: np.ndarray) -> ModelOutput:
    """Score a single item; the returned cache feeds ``backward``."""
    f, sigma, cache = forward_batch(params, np.asarray(x, dtype=np.float64)[None, ...])
    return ModelOutput(f=float(f[0]), sigma=float(sigma[0]), cache=cache)


def backward(params: ScorerParams, out: ModelOutput,
             d_f: float, d_sigma: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradient of d_f*f + d_sigma*sigma for a single item's forward call."""
    return backward_batch(params, out.cache, np.array([d_f]), np.array([d_sigma]))


def score_items(params: ScorerParams, items) -> tuple[np.ndarray, np.ndarray]:
    """Convenience: stack item features and run one batched forward pass."""
    x = np.stack([it.features for it in items])
    f, sigma, _ = forward_batch(params, x)
    return f, sigma


# ---------------------------------------------------------------------------
# Checkpoint format (see docs/formats.md)
# ---------------------------------------------------------------------------


def _arch_to_dict(arch: Architecture) -> dict:
    return {"kind": arch.kind, "input_dim": arch.input_dim, "spatial": arch.spatial,
            "channels": arch.channels, "hidden_sizes": list(arch.hidden_sizes),
            "sigma_floor": arch.sigma_floor}


def _arch_from_dict(d: dict) -> Architecture:
    return Architecture(kind=d["kind"], input_dim=int(d["input_dim"]),
                        spatial=int(d["spatial"]), channels=int(d["channels"]),
                        hidden_sizes=tuple(int(h) for h in d["hidden_sizes"]),
                        sigma_floor=float(d["sigma_floor"]))


def save_checkpoint(params: ScorerParams, path: str | Path,
                    meta: dict | None = None) -> None:
    """Full-precision JSON checkpoint: architecture, parameters, and caller
    metadata (training-config echo, seed lineage, ...)."""
    doc = {
        "format": "pairq-checkpoint-v1",
        "architecture": _arch_to_dict(params.arch),
        "layers": [{"weight": w.tolist(), "bias": b.tolist()}
                   for w, b in zip(params.weights, params.biases)],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ScorerParams, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "pairq-checkpoint-v1":
        raise ValueError(f"{path}: not a scorer checkpoint")
    arch = _arch_from_dict(doc["architecture"])
    weights = [np.array(layer["weight"], dtype=np.float64) for layer in doc["layers"]]
    biases = [np.array(layer["bias"], dtype=np.float64) for layer in doc["layers"]]
    return ScorerParams(arch=arch, weights=weights, biases=biases), doc.get("meta", {})
