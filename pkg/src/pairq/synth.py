"""Synthetic multi-database fixtures with a known latent quality axis.

Each generated database views one shared latent quality axis through its own
affine opinion map (its "rating scale"), its own latent subrange, and its own
polarity — so raw or even linearly re-scaled opinion scores are NOT
comparable across databases even though a common ground truth exists. Rating
stds follow an arch over each database's range: small at the quality
extremes, peaking mid-range, mimicking how human raters agree more about
clearly bad or clearly good stimuli.

Features are a fixed nonlinear embedding of the latent quality plus optional
Gaussian noise; the latent value itself is emitted only to a sidecar file so
training code cannot touch it.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import DMOS, MOS, AnnotatedItem, Database

# Calibrated so a linear scorer tops out near 0.95 held-out SRCC on the
# default benchmark (see scripts/calibrate_noise.py).
DEFAULT_NOISE_STD = 0.18
DEFAULT_FEATURE_DIM = 8
DEFAULT_ITEMS_PER_DB = 600
DEFAULT_GROUP_SIZE = 3


@dataclass(frozen=True)
class SynthDbConfig:
    """Recipe for one synthetic database on the common latent axis."""

    name: str
    scenario: str
    polarity: str
    n_items: int
    q_lo: float
    q_hi: float
    slope: float           # opinion map mu = slope * q + intercept
    intercept: float
    sigma_0: float         # rating-std floor at the quality extremes
    sigma_max: float       # extra rating std at mid quality
    gamma: float = 1.0
    feature_dim: int = DEFAULT_FEATURE_DIM
    noise_std: float = DEFAULT_NOISE_STD
    group_size: int = DEFAULT_GROUP_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.slope == 0.0:
            raise ValueError("slope must be nonzero")
        if self.sigma_0 < 0.0 or self.sigma_max < 0.0:
            raise ValueError("sigma_0 and sigma_max must be >= 0")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")
        if not self.q_hi > self.q_lo:
            raise ValueError("need q_hi > q_lo")
        if self.n_items < 1 or self.feature_dim < 1 or self.group_size < 1:
            raise ValueError("n_items, feature_dim, group_size must be >= 1")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be > 0")


def arch_sigma(q: float, q_lo: float, q_hi: float, sigma_max: float,
               sigma_0: float, gamma: float) -> float:
    """Rating std as an arch over [q_lo, q_hi]:
    sigma_0 + sigma_max * (1 - u^2)^gamma with u in [-1, 1].

    Maximal at midrange, minimal at the endpoints.
    """
    if not q_lo <= q <= q_hi:
        raise ValueError(f"q={q} outside [{q_lo}, {q_hi}]")
    u = 2.0 * (q - q_lo) / (q_hi - q_lo) - 1.0
    return sigma_0 + sigma_max * (1.0 - u * u) ** gamma


_TRANSFORMS = (
    lambda q: q,
    lambda q: q * q,
    np.sin,
    lambda q: np.tanh(q / 2.0),
    np.cos,
    lambda q: q ** 3,
    lambda q: np.sin(2.0 * q),
    lambda q: np.cos(2.0 * q),
)


def embed_quality(q: np.ndarray, dim: int) -> np.ndarray:
    """Deterministic nonlinear embedding of latent quality, (n, dim).

    Coordinate 0 is the latent value itself; remaining coordinates are fixed
    smooth transforms, zero-padded past the transform list.
    """
    q = np.asarray(q, dtype=np.float64)
    cols = []
    for k in range(dim):
        if k < len(_TRANSFORMS):
            cols.append(np.asarray(_TRANSFORMS[k](q), dtype=np.float64))
        else:
            cols.append(np.zeros_like(q))
    return np.stack(cols, axis=1)


def gen_database(cfg: SynthDbConfig) -> tuple[Database, dict[str, float]]:
    """Generate one database plus its id -> latent-quality ground truth.

    The ground truth is returned separately (and written to a sidecar file
    by the CLI), never stored in the database records.
    """
    rng = np.random.default_rng(cfg.seed)
    q = rng.uniform(cfg.q_lo, cfg.q_hi, size=cfg.n_items)
    features = embed_quality(q, cfg.feature_dim)
    if cfg.noise_std > 0.0:
        features = features + rng.normal(0.0, cfg.noise_std, size=features.shape)

    items: list[AnnotatedItem] = []
    truth: dict[str, float] = {}
    for i in range(cfg.n_items):
        item_id = f"{cfg.name}-{i:05d}"
        group = f"{cfg.name}-g{i // cfg.group_size:04d}"
        sigma = arch_sigma(float(q[i]), cfg.q_lo, cfg.q_hi,
                           cfg.sigma_max, cfg.sigma_0, cfg.gamma)
        items.append(AnnotatedItem(
            id=item_id, db=cfg.name, content=group,
            mu=cfg.slope * float(q[i]) + cfg.intercept, sigma=sigma,
            features=features[i]))
        truth[item_id] = float(q[i])
    db = Database(name=cfg.name, scenario=cfg.scenario, polarity=cfg.polarity,
                  items=items)
    return db, truth


def benchmark_configs(seed: int, n_items: int = DEFAULT_ITEMS_PER_DB,
                      noise_std: float = DEFAULT_NOISE_STD,
                      feature_dim: int = DEFAULT_FEATURE_DIM) -> list[SynthDbConfig]:
    """Three databases over one latent axis with incommensurable scales.

    The latent subranges overlap but differ, so equal linearly re-scaled
    opinion scores do not imply equal latent quality. Rating-std arches are
    proportional to each opinion map's slope magnitude, keeping the
    standardized pair differences consistent across databases.
    """
    ss = np.random.SeedSequence(seed)
    child = [int(s.generate_state(1)[0]) for s in ss.spawn(3)]
    common = dict(n_items=n_items, noise_std=noise_std, feature_dim=feature_dim)
    return [
        # DMOS on [0, 1]-style scale: higher score = worse quality
        SynthDbConfig(name="synlab", scenario="synthetic", polarity=DMOS,
                      q_lo=0.0, q_hi=0.75, slope=-1.0, intercept=1.0,
                      sigma_0=0.03, sigma_max=0.12, seed=child[0], **common),
        # MOS on a [0, 100]-style crowdsourced scale
        SynthDbConfig(name="fieldcrowd", scenario="realistic", polarity=MOS,
                      q_lo=0.25, q_hi=1.0, slope=100.0, intercept=0.0,
                      sigma_0=3.0, sigma_max=12.0, seed=child[1], **common),
        # MOS on a [1, 5]-style categorical scale
        SynthDbConfig(name="labfive", scenario="realistic", polarity=MOS,
                      q_lo=0.05, q_hi=0.95, slope=4.0, intercept=1.0,
                      sigma_0=0.12, sigma_max=0.48, seed=child[2], **common),
    ]


def gen_benchmark(seed: int, n_items: int = DEFAULT_ITEMS_PER_DB,
                  noise_std: float = DEFAULT_NOISE_STD
                  ) -> list[tuple[Database, dict[str, float], SynthDbConfig]]:
    return [(*gen_database(cfg), cfg)
            for cfg in benchmark_configs(seed, n_items=n_items, noise_std=noise_std)]


# ---------------------------------------------------------------------------
# Sidecar ground truth and manifest
# ---------------------------------------------------------------------------


def save_ground_truth(truth: dict[str, float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for item_id in sorted(truth):
            writer.writerow([item_id, repr(truth[item_id])])


def load_ground_truth(path: str | Path) -> dict[str, float]:
    truth: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if row:
                truth[row[0]] = float(row[1])
    return truth


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(path: Path, seed: int, entries: list[dict]) -> None:
    """Record the exact generation recipe plus content hashes; identical
    seeds yield byte-identical manifests."""
    doc = {"format": "pairq-benchmark-manifest-v1", "seed": seed, "databases": entries}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def generate_benchmark_files(outdir: str | Path, seed: int,
                             n_items: int = DEFAULT_ITEMS_PER_DB,
                             noise_std: float = DEFAULT_NOISE_STD) -> Path:
    """Write the benchmark databases, truth sidecars, and manifest; returns
    the manifest path."""
    from .data import save_database

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for db, truth, cfg in gen_benchmark(seed, n_items=n_items, noise_std=noise_std):
        db_path = outdir / f"{db.name}.jsonl"
        truth_path = outdir / f"{db.name}.truth.csv"
        save_database(db, db_path)
        save_ground_truth(truth, truth_path)
        entries.append({
            "name": db.name,
            "file": db_path.name,
            "truth_file": truth_path.name,
            "sha256": _sha256(db_path),
            "truth_sha256": _sha256(truth_path),
            "config": asdict(cfg),
        })
    manifest = outdir / "manifest.json"
    write_manifest(manifest, seed, entries)
    return manifest
