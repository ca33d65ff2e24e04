"""Seeded experiment sessions: split, sample, train, evaluate, aggregate.

One session = one content-aware train/test split of every database plus a
train/eval cycle. Sessions are repeated over a list of seeds and summarized
by medians. Several training variants can run on shared seeds (identical
splits, identical sampled pairs, identical initialization) so that loss
ablations are directly comparable:

  fidelity+hinge   pairwise training, fidelity loss + hinge std regularizer
  fidelity-only    pairwise training, fidelity loss alone
  binary-ce        pairwise training, cross entropy on hard 0/1 labels
  continuous-ce    pairwise training, cross entropy on continuous labels
  mse              per-database regression onto raw opinion means
  rescale+mse      one regression onto means linearly re-scaled to a common
                   range across databases

The non-fidelity variants carry no hinge term (the std head is supervised
only where the loss itself involves it). Regression variants optimize on
per-database standardized targets and predictions are mapped back to the
native target scale, so the published baseline behavior (well-fitted on its
own scale, incommensurable across databases) is reproduced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import metrics
from .data import MOS, Database, Split, load_database, normalize_polarity, split_by_content
from .losses import LossConfig, rescale_mos
from .metrics import AggregateReport, DbMetrics, EvalReport
from .pairs import PairSample, TrainingSet, combine, sample_pairs
from .scorer import Architecture, ScorerParams, forward_batch, save_checkpoint, score_items
from .synth import load_ground_truth
from .trainer import TrainConfig, TrainReport, train, train_regression, write_epoch_log

VARIANTS = ("fidelity+hinge", "fidelity-only", "binary-ce", "continuous-ce",
            "mse", "rescale+mse")
_PAIRWISE_VARIANTS = ("fidelity+hinge", "fidelity-only", "binary-ce", "continuous-ce")

# seed-derivation purposes
_SPLIT, _TRAIN_PAIRS, _TEST_PAIRS, _TRAIN = 1, 2, 3, 4


def derive_seed(session_seed: int, purpose: int, index: int = 0) -> int:
    """Stable child seed for one named purpose within a session."""
    return int(np.random.SeedSequence([session_seed, purpose, index]).generate_state(1)[0])


@dataclass(frozen=True)
class SessionConfig:
    database_paths: tuple[str, ...]
    session_seeds: tuple[int, ...]
    outdir: str
    truth_paths: tuple[str, ...] | None = None
    variants: tuple[str, ...] = ("fidelity+hinge",)
    train_fraction: float = 0.8
    pairs_per_db: dict[str, int] | None = None
    total_pairs: int = 6000
    test_pairs_per_db: int = 500
    arch_kind: str = "mlp"
    hidden_sizes: tuple[int, ...] = (16,)
    sigma_floor: float = 1e-6
    train: TrainConfig = field(default_factory=TrainConfig)
    ttest_reference: str = "fidelity+hinge"
    ttest_alpha: float = 0.05
    rescale_range: tuple[float, float] = (0.0, 100.0)

    def __post_init__(self):
        if not self.database_paths:
            raise ValueError("no database paths given")
        if not self.session_seeds:
            raise ValueError("no session seeds given")
        if len(set(self.session_seeds)) != len(self.session_seeds):
            raise ValueError("session seeds must be distinct")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ValueError(f"unknown variants {sorted(unknown)}; choose from {VARIANTS}")
        if self.truth_paths is not None and len(self.truth_paths) != len(self.database_paths):
            raise ValueError("need one truth path per database path")
        if self.total_pairs < 1:
            raise ValueError("total_pairs must be >= 1")
        if self.test_pairs_per_db < 1:
            raise ValueError("test_pairs_per_db must be >= 1")


def session_config_to_json(cfg: SessionConfig, path: str | Path) -> None:
    doc = {
        "database_paths": list(cfg.database_paths),
        "truth_paths": list(cfg.truth_paths) if cfg.truth_paths else None,
        "variants": list(cfg.variants),
        "session_seeds": list(cfg.session_seeds),
        "train_fraction": cfg.train_fraction,
        "pairs_per_db": cfg.pairs_per_db,
        "total_pairs": cfg.total_pairs,
        "test_pairs_per_db": cfg.test_pairs_per_db,
        "arch_kind": cfg.arch_kind,
        "hidden_sizes": list(cfg.hidden_sizes),
        "sigma_floor": cfg.sigma_floor,
        "outdir": cfg.outdir,
        "ttest_reference": cfg.ttest_reference,
        "ttest_alpha": cfg.ttest_alpha,
        "rescale_range": list(cfg.rescale_range),
        "train": {
            "epochs": cfg.train.epochs,
            "warmup_epochs": cfg.train.warmup_epochs,
            "batch_size_warmup": cfg.train.batch_size_warmup,
            "batch_size_main": cfg.train.batch_size_main,
            "lr0": cfg.train.lr0,
            "decay_factor": cfg.train.decay_factor,
            "decay_every": cfg.train.decay_every,
            "seed": cfg.train.seed,
            "adam_betas": list(cfg.train.adam_betas),
            "adam_eps": cfg.train.adam_eps,
            "clip_norm": cfg.train.clip_norm,
            "loss": {
                "margin": cfg.train.loss.margin,
                "hinge_weight": cfg.train.loss.hinge_weight,
                "prob_clamp": cfg.train.loss.prob_clamp,
            },
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def session_config_from_json(path: str | Path) -> SessionConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    train_doc = doc.get("train", {})
    loss_doc = train_doc.pop("loss", {})
    train_cfg = TrainConfig(
        loss=LossConfig(**loss_doc),
        **{k: (tuple(v) if k == "adam_betas" else v) for k, v in train_doc.items()})
    kwargs = {k: v for k, v in doc.items() if k != "train"}
    for key in ("database_paths", "truth_paths", "variants", "session_seeds",
                "hidden_sizes", "rescale_range"):
        if kwargs.get(key) is not None:
            kwargs[key] = tuple(kwargs[key])
    return SessionConfig(train=train_cfg, **kwargs)


# ---------------------------------------------------------------------------
# Per-variant model containers
# ---------------------------------------------------------------------------


@dataclass
class VariantModels:
    """Trained parameters for one variant: one shared scorer, or one per
    database for the per-database regression baseline. ``unscale`` maps a
    model's native outputs back onto its training-target scale."""

    variant: str
    shared: ScorerParams | None = None
    per_db: dict[str, ScorerParams] = field(default_factory=dict)
    unscale: dict[str, tuple[float, float]] = field(default_factory=dict)
    reports: dict[str, TrainReport] = field(default_factory=dict)

    def params_for(self, db_name: str) -> ScorerParams:
        if self.shared is not None:
            return self.shared
        return self.per_db[db_name]

    def predictions(self, db_name: str, items: Sequence) -> np.ndarray:
        """Quality predictions on the variant's comparable output scale."""
        f, _ = score_items(self.params_for(db_name), items)
        scale, offset = self.unscale.get(db_name, (1.0, 0.0))
        return f * scale + offset


def _proportional_counts(dbs: Sequence[Database], total: int) -> dict[str, int]:
    sizes = {db.name: len(db) for db in dbs}
    grand = sum(sizes.values())
    counts = {name: max(1, round(total * size / grand)) for name, size in sizes.items()}
    return counts


def _check_no_contamination(pairs: Sequence[PairSample], train_ids: frozenset[str],
                            db_name: str) -> None:
    for pr in pairs:
        if pr.x_id not in train_ids or pr.y_id not in train_ids:
            raise RuntimeError(
                f"contamination: training pair ({pr.x_id!r}, {pr.y_id!r}) "
                f"escapes the train side of {db_name!r}")


def _standardized(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(values.mean())
    std = float(values.std())
    if std == 0.0:
        raise ValueError("constant regression targets")
    return (values - mean) / std, std, mean


def _fit_variant(variant: str, dbs: Sequence[Database], splits: Mapping[str, Split],
                 items_all: Mapping, arch: Architecture, cfg: SessionConfig,
                 session_seed: int) -> VariantModels:
    counts = cfg.pairs_per_db or _proportional_counts(dbs, cfg.total_pairs)
    train_seed = derive_seed(session_seed, _TRAIN, 0)
    models = VariantModels(variant=variant)

    if variant in _PAIRWISE_VARIANTS:
        per_db_pairs = []
        seeds: dict[str, int] = {}
        for i, db in enumerate(dbs):
            seed = derive_seed(session_seed, _TRAIN_PAIRS, i)
            seeds[db.name] = seed
            sampled = sample_pairs(db, splits[db.name].train_ids, counts[db.name], seed)
            _check_no_contamination(sampled, splits[db.name].train_ids, db.name)
            per_db_pairs.append(sampled)
        train_set = combine(per_db_pairs, seeds=seeds)
        train_cfg = replace(cfg.train, seed=train_seed)
        report = train(train_set, items_all, arch, train_cfg, loss_kind=variant)
        models.shared = report.params
        models.reports["all"] = report
        return models

    if variant == "mse":
        for i, db in enumerate(dbs):
            train_items = [it for it in db.items if it.id in splits[db.name].train_ids]
            targets, std, mean = _standardized(np.array([it.mu for it in train_items]))
            feats = np.stack([it.features for it in train_items])
            train_cfg = replace(cfg.train, seed=derive_seed(session_seed, _TRAIN, 1 + i))
            report = train_regression(feats, targets, arch, train_cfg)
            models.per_db[db.name] = report.params
            models.unscale[db.name] = (std, mean)
            models.reports[db.name] = report
        return models

    if variant == "rescale+mse":
        lo, hi = cfg.rescale_range
        rescaled = {db.name: rescale_mos(db, lo, hi) for db in dbs}
        rows, raw_targets = [], []
        for db in dbs:
            items_rescaled = rescaled[db.name].item_map()
            for it in db.items:
                if it.id in splits[db.name].train_ids:
                    rows.append(it.features)
                    raw_targets.append(items_rescaled[it.id].mu)
        targets, std, mean = _standardized(np.array(raw_targets))
        train_cfg = replace(cfg.train, seed=train_seed)
        report = train_regression(np.stack(rows), targets, arch, train_cfg)
        models.shared = report.params
        models.unscale = {db.name: (std, mean) for db in dbs}
        models.reports["all"] = report
        return models

    raise ValueError(f"unknown variant {variant!r}")


def _evaluate_variant(session_seed: int, models: VariantModels,
                      dbs: Sequence[Database], splits: Mapping[str, Split],
                      items_all: Mapping,
                      test_pairs: Mapping[str, list[PairSample]],
                      truth: Mapping[str, float] | None) -> EvalReport:
    per_db: dict[str, DbMetrics] = {}
    pooled_pred: list[float] = []
    pooled_truth: list[float] = []
    for db in dbs:
        test_ids = sorted(splits[db.name].test_ids)
        test_items = [items_all[tid] for tid in test_ids]
        preds = models.predictions(db.name, test_items)
        mu = [it.mu for it in test_items]
        params = models.params_for(db.name)
        per_db[db.name] = DbMetrics(
            n_images=len(test_ids),
            srcc=metrics.srcc(preds, mu),
            plcc=metrics.plcc(preds, mu),
            fidelity=metrics.fidelity_metric(params, test_pairs[db.name], items_all,
                                             forbidden_ids=splits[db.name].train_ids),
            sigma_acc=metrics.uncertainty_order_accuracy(params, test_pairs[db.name],
                                                         items_all))
        if truth is not None:
            pooled_pred.extend(float(v) for v in preds)
            pooled_truth.extend(truth[tid] for tid in test_ids)
    pooled = metrics.srcc(pooled_pred, pooled_truth) if truth is not None else None
    return EvalReport(session=session_seed, per_db=per_db, pooled_latent_srcc=pooled)


# ---------------------------------------------------------------------------
# Full protocol
# ---------------------------------------------------------------------------


@dataclass
class SessionsResult:
    reports: dict[str, list[EvalReport]]          # variant -> per-session reports
    aggregates: dict[str, AggregateReport]        # variant -> median/MAD
    ttest: dict[str, dict[str, int]]              # variant -> {db: -1|0|+1} vs reference


def _load_inputs(cfg: SessionConfig) -> tuple[list[Database], dict, dict | None]:
    dbs = [normalize_polarity(load_database(p)) for p in cfg.database_paths]
    names = [db.name for db in dbs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate database names: {names}")
    items_all: dict = {}
    for db in dbs:
        for it in db.items:
            if it.id in items_all:
                raise ValueError(f"item id {it.id!r} appears in two databases")
            items_all[it.id] = it
    truth: dict[str, float] | None = None
    if cfg.truth_paths is not None:
        truth = {}
        for path in cfg.truth_paths:
            truth.update(load_ground_truth(path))
    return dbs, items_all, truth


def _make_arch(cfg: SessionConfig, dbs: Sequence[Database]) -> Architecture:
    shapes = {db.feature_shape for db in dbs}
    if len(shapes) != 1:
        raise ValueError(f"databases disagree on feature shape: {sorted(shapes)}")
    shape = shapes.pop()
    if cfg.arch_kind == "bilinear_mlp":
        if len(shape) != 2:
            raise ValueError("bilinear_mlp needs (s, c) feature maps")
        return Architecture(kind=cfg.arch_kind, spatial=shape[0], channels=shape[1],
                            hidden_sizes=cfg.hidden_sizes, sigma_floor=cfg.sigma_floor)
    if len(shape) != 1:
        raise ValueError(f"{cfg.arch_kind} needs flat feature vectors")
    hidden = () if cfg.arch_kind == "linear" else cfg.hidden_sizes
    return Architecture(kind=cfg.arch_kind, input_dim=shape[0],
                        hidden_sizes=hidden, sigma_floor=cfg.sigma_floor)


def run_single_session(cfg: SessionConfig, session_seed: int,
                       dbs: Sequence[Database], items_all: Mapping,
                       truth: Mapping[str, float] | None,
                       outdir: Path | None) -> dict[str, EvalReport]:
    """All requested variants on one session seed; returns variant -> report."""
    arch = _make_arch(cfg, dbs)
    splits = {db.name: split_by_content(db, cfg.train_fraction,
                                        derive_seed(session_seed, _SPLIT, i))
              for i, db in enumerate(dbs)}
    test_pairs = {db.name: sample_pairs(db, splits[db.name].test_ids,
                                        cfg.test_pairs_per_db,
                                        derive_seed(session_seed, _TEST_PAIRS, i))
                  for i, db in enumerate(dbs)}

    out: dict[str, EvalReport] = {}
    for variant in cfg.variants:
        models = _fit_variant(variant, dbs, splits, items_all, arch, cfg, session_seed)
        report = _evaluate_variant(session_seed, models, dbs, splits, items_all,
                                   test_pairs, truth)
        out[variant] = report
        if outdir is not None:
            vdir = outdir / f"session_{session_seed}" / variant.replace("+", "_")
            vdir.mkdir(parents=True, exist_ok=True)
            metrics.report_to_csv(report, vdir / "report.csv")
            for tag, train_report in models.reports.items():
                meta = {
                    "variant": variant,
                    "session_seed": session_seed,
                    "scope": tag,
                    "train_seed": train_report.seed,
                    "loss_kind": train_report.loss_kind,
                    "epochs": [
                        {"epoch": r.epoch, "lr": r.lr, "batch_size": r.batch_size,
                         "mean_loss": r.mean_loss} for r in train_report.rows],
                }
                save_checkpoint(train_report.params,
                                vdir / f"checkpoint_{tag}.json", meta=meta)
                write_epoch_log(train_report, vdir / f"epochs_{tag}.csv")
    return out


def run_sessions(cfg: SessionConfig) -> SessionsResult:
    """The full seeded protocol; writes per-session and aggregate artifacts
    under ``cfg.outdir`` and returns everything in memory as well."""
    dbs, items_all, truth = _load_inputs(cfg)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    reports: dict[str, list[EvalReport]] = {v: [] for v in cfg.variants}
    for session_seed in cfg.session_seeds:
        by_variant = run_single_session(cfg, session_seed, dbs, items_all, truth, outdir)
        for variant, report in by_variant.items():
            reports[variant].append(report)

    aggregates = {v: metrics.median_across_sessions(reports[v]) for v in cfg.variants}
    for variant in cfg.variants:
        metrics.aggregate_to_csv(
            aggregates[variant],
            outdir / f"aggregate_{variant.replace('+', '_')}.csv")

    _write_comparison_csv(cfg, aggregates, outdir / "comparison_srcc.csv")
    ttest = _ttest_table(cfg, reports)
    if ttest:
        _write_ttest_csv(cfg, ttest, outdir / "ttest_srcc.csv")
    return SessionsResult(reports=reports, aggregates=aggregates, ttest=ttest)


def _db_columns(aggregates: dict[str, AggregateReport]) -> list[str]:
    keys = next(iter(aggregates.values())).median.keys()
    dbs = sorted({db for db, _ in keys if not db.startswith("__")})
    dbs.append(metrics.WEIGHTED_KEY)
    if any(db == metrics.POOLED_KEY for db, _ in keys):
        dbs.append(metrics.POOLED_KEY)
    return dbs


def _write_comparison_csv(cfg: SessionConfig, aggregates: dict[str, AggregateReport],
                          path: Path) -> None:
    """Variants x databases table of median SRCC values."""
    import csv as _csv

    columns = _db_columns(aggregates)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["variant"] + columns)
        for variant in cfg.variants:
            med = aggregates[variant].median
            writer.writerow([variant] + [repr(med[(db, "srcc")]) for db in columns])


def _ttest_table(cfg: SessionConfig,
                 reports: dict[str, list[EvalReport]]) -> dict[str, dict[str, int]]:
    ref = cfg.ttest_reference
    if ref not in reports or len(cfg.session_seeds) < 2:
        return {}
    table: dict[str, dict[str, int]] = {}
    ref_maps = [rep.metric_map() for rep in reports[ref]]
    for variant in cfg.variants:
        if variant == ref:
            continue
        var_maps = [rep.metric_map() for rep in reports[variant]]
        row: dict[str, int] = {}
        for db, name in ref_maps[0]:
            if name != "srcc" or db == metrics.POOLED_KEY:
                continue
            a = [m[(db, name)] for m in ref_maps]
            b = [m[(db, name)] for m in var_maps]
            row[db] = metrics.one_sided_t_test(a, b, cfg.ttest_alpha)
        table[variant] = row
    return table


def _write_ttest_csv(cfg: SessionConfig, table: dict[str, dict[str, int]],
                     path: Path) -> None:
    import csv as _csv

    columns = sorted({db for row in table.values() for db in row if not db.startswith("__")})
    columns.append(metrics.WEIGHTED_KEY)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["reference", "versus"] + columns)
        for variant in cfg.variants:
            if variant not in table:
                continue
            writer.writerow([cfg.ttest_reference, variant]
                            + [table[variant][db] for db in columns])
