"""Command-line entry point.

Subcommands: synth, sample-pairs, train, eval, run-sessions, gmad,
gradcheck. Run configs are single JSON files (see docs/formats.md); flags
cover only paths, seed overrides, and verbosity.

Exit codes: 0 success, 1 validation error, 2 numeric failure (non-finite
loss or failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gmad as gmad_mod
from . import metrics, synth
from .data import FormatError, load_database, normalize_polarity
from .pairs import combine, sample_pairs, save_pairs
from .scorer import Architecture, load_checkpoint, save_checkpoint, score_items
from .session import (SessionConfig, run_sessions, session_config_from_json)
from .trainer import NumericError, TrainConfig, grad_check, train, write_epoch_log
from .losses import LossConfig

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2

GRADCHECK_TOLERANCES = {"linear": 1e-6, "mlp": 1e-4, "bilinear_mlp": 1e-4}
_GRADCHECK_ARCHS = {
    "linear": Architecture(kind="linear", input_dim=6),
    "mlp": Architecture(kind="mlp", input_dim=6, hidden_sizes=(8,)),
    "bilinear_mlp": Architecture(kind="bilinear_mlp", spatial=3, channels=4,
                                 hidden_sizes=(8,)),
}


def cmd_synth(args) -> int:
    outdir = Path(args.out)
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        seed = int(doc.get("seed", args.seed))
        n_items = int(doc.get("n_items", synth.DEFAULT_ITEMS_PER_DB))
        noise_std = float(doc.get("noise_std", synth.DEFAULT_NOISE_STD))
    else:
        seed, n_items, noise_std = args.seed, synth.DEFAULT_ITEMS_PER_DB, synth.DEFAULT_NOISE_STD
    manifest = synth.generate_benchmark_files(outdir, seed, n_items=n_items,
                                              noise_std=noise_std)
    print(f"wrote benchmark to {outdir} (manifest: {manifest})")
    return EXIT_OK


def cmd_sample_pairs(args) -> int:
    per_db = []
    seeds = {}
    for i, path in enumerate(args.db):
        db = normalize_polarity(load_database(path))
        pool = db.ids()
        seed = args.seed + i
        seeds[db.name] = seed
        per_db.append(sample_pairs(db, pool, args.n, seed))
    ts = combine(per_db, seeds=seeds)
    save_pairs(ts, args.out)
    print(f"wrote {len(ts)} pairs to {args.out}")
    return EXIT_OK


def _train_config_from_doc(doc: dict) -> TrainConfig:
    loss_doc = doc.get("loss", {})
    keys = ("epochs", "warmup_epochs", "batch_size_warmup", "batch_size_main",
            "lr0", "decay_factor", "decay_every", "seed", "adam_eps", "clip_norm")
    kwargs = {k: doc[k] for k in keys if k in doc}
    if "adam_betas" in doc:
        kwargs["adam_betas"] = tuple(doc["adam_betas"])
    return TrainConfig(loss=LossConfig(**loss_doc), **kwargs)


def cmd_train(args) -> int:
    doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = _train_config_from_doc(doc.get("train", {}))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    items_all: dict = {}
    per_db = []
    seeds = {}
    for i, path in enumerate(doc["database_paths"]):
        db = normalize_polarity(load_database(path))
        items_all.update(db.item_map())
        seed = cfg.seed * 1000 + i
        seeds[db.name] = seed
        counts = doc.get("pairs_per_db") or {}
        n = int(counts.get(db.name, doc.get("pairs_default", 2000)))
        per_db.append(sample_pairs(db, db.ids(), n, seed))
    train_set = combine(per_db, seeds=seeds)

    arch_doc = doc["architecture"]
    arch = Architecture(kind=arch_doc["kind"],
                        input_dim=int(arch_doc.get("input_dim", 0)),
                        spatial=int(arch_doc.get("spatial", 0)),
                        channels=int(arch_doc.get("channels", 0)),
                        hidden_sizes=tuple(arch_doc.get("hidden_sizes", ())),
                        sigma_floor=float(arch_doc.get("sigma_floor", 1e-6)))
    loss_kind = doc.get("loss_kind", "fidelity+hinge")
    report = train(train_set, items_all, arch, cfg, loss_kind=loss_kind)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(report.params, outdir / "checkpoint.json",
                    meta={"loss_kind": loss_kind, "train_seed": report.seed,
                          "config": doc})
    write_epoch_log(report, outdir / "epochs.csv")
    print(f"final mean loss {report.final_loss:.6f} "
          f"(initial {report.initial_loss:.6f}); wrote {outdir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    db = normalize_polarity(load_database(args.db))
    items = db.item_map()
    ordered = sorted(items)
    preds, _ = score_items(params, [items[i] for i in ordered])
    mu = [items[i].mu for i in ordered]
    report = metrics.EvalReport(session=args.seed, per_db={})
    test_pairs = sample_pairs(db, db.ids(), args.pairs, args.seed)
    report.per_db[db.name] = metrics.DbMetrics(
        n_images=len(ordered),
        srcc=metrics.srcc(preds, mu),
        plcc=metrics.plcc(preds, mu),
        fidelity=metrics.fidelity_metric(params, test_pairs, items),
        sigma_acc=metrics.uncertainty_order_accuracy(params, test_pairs, items))
    if args.truth:
        truth = synth.load_ground_truth(args.truth)
        report.pooled_latent_srcc = metrics.srcc(
            preds, [truth[i] for i in ordered])
    metrics.report_to_csv(report, args.out)
    m = report.per_db[db.name]
    print(f"{db.name}: srcc={m.srcc:.4f} plcc={m.plcc:.4f} fidelity={m.fidelity:.4f}")
    return EXIT_OK


def cmd_run_sessions(args) -> int:
    cfg = session_config_from_json(args.config)
    if args.outdir:
        cfg = replace(cfg, outdir=args.outdir)
    result = run_sessions(cfg)
    for variant in cfg.variants:
        med = result.aggregates[variant].median
        weighted = med[(metrics.WEIGHTED_KEY, "srcc")]
        print(f"{variant}: median weighted srcc {weighted:.4f}")
    print(f"artifacts in {cfg.outdir}")
    return EXIT_OK


def _scores_for(corpus_db, params) -> dict[str, float]:
    items = corpus_db.item_map()
    ordered = sorted(items)
    f, _ = score_items(params, [items[i] for i in ordered])
    return {i: float(v) for i, v in zip(ordered, f)}


def cmd_gmad(args) -> int:
    attacker_params, _ = load_checkpoint(args.attacker)
    defender_params, _ = load_checkpoint(args.defender)
    corpus = normalize_polarity(load_database(args.corpus))
    attacker_scores = _scores_for(corpus, attacker_params)
    defender_scores = _scores_for(corpus, defender_params)
    cfg = gmad_mod.GmadConfig(n_levels=args.levels, level_tolerance=args.tolerance)
    forward_pairs = gmad_mod.gmad_search(attacker_scores, defender_scores, cfg)
    reverse_pairs = gmad_mod.gmad_search(defender_scores, attacker_scores, cfg)
    out = Path(args.out)
    gmad_mod.pairs_to_csv(forward_pairs, out, attacker="attacker", defender="defender")
    reverse_out = out.with_name(out.stem + "_roles_swapped" + out.suffix)
    gmad_mod.pairs_to_csv(reverse_pairs, reverse_out, attacker="defender",
                          defender="attacker")
    print(f"wrote {len(forward_pairs)} + {len(reverse_pairs)} pairs "
          f"to {out} and {reverse_out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    failed = False
    print(f"{'arch':<14} {'max rel err':>12} {'tolerance':>10}  status")
    for name in args.arch:
        if name not in _GRADCHECK_ARCHS:
            raise ValueError(f"unknown architecture {name!r}")
        arch = _GRADCHECK_ARCHS[name]
        tol = GRADCHECK_TOLERANCES[name]
        err = max(grad_check(arch, seed, n_trials=args.trials)
                  for seed in range(args.seeds))
        ok = err <= tol
        failed = failed or not ok
        print(f"{name:<14} {err:>12.3e} {tol:>10.0e}  {'PASS' if ok else 'FAIL'}")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairq",
        description="Pairwise quality learning across incommensurable rating scales")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--config", help="JSON config (seed, n_items, noise_std)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample-pairs", help="sample training pairs from databases")
    p.add_argument("--db", nargs="+", required=True)
    p.add_argument("--n", type=int, default=2000, help="pairs per database")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_pairs)

    p = sub.add_parser("train", help="train one scorer from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one database")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--truth", help="latent ground-truth sidecar (optional)")
    p.add_argument("--pairs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run-sessions", help="full seeded multi-session protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir", help="override config outdir")
    p.set_defaults(func=cmd_run_sessions)

    p = sub.add_parser("gmad", help="maximum-differentiation pair search")
    p.add_argument("--attacker", required=True)
    p.add_argument("--defender", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gmad)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--arch", nargs="*", default=list(_GRADCHECK_ARCHS))
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--trials", type=int, default=2)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
