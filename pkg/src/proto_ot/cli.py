"""Command-line pipeline: synthetic data, prototype training, both
adaptation modes, mixup batch dumps, evaluation, and experiment sweeps.

Config precedence is CLI flag > config file (--config JSON) > module
default; every subcommand writes the effective configuration as JSON
next to its outputs.  Exit codes: 0 success, 1 runtime failure
(non-convergence under --strict), 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ._rng import subseed
from .adapt import adapt_one_class, adapt_prototypes
from .features import (FeatureTableError, SynthConfig, l2_normalize,
                       load_feature_table, save_feature_table, synth_multidomain)
from .light import (LightTrainConfig, load_linear_classifier,
                    save_linear_classifier, fit_light)
from .metrics import ScoreSet, metric_report, roc_points
from .mixup import BarycenterConfig, sample_mixup_batch
from .ot import OTConfig
from .prototypes import (TrainConfig, decision_scores, fit_prototype_bank,
                         load_prototype_bank, save_prototype_bank)
from .protocol import DEFAULT_SWEEP_METHODS, ProtocolConfig, run_protocol


class UsageError(ValueError):
    """Validation problem that maps to exit code 2."""


def _layered(args: argparse.Namespace, defaults: dict) -> dict:
    """flag > config file > defaults."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_path}: {exc}")
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _write_effective(out: Path, cfg: dict) -> None:
    target = out / "effective_config.json" if out.is_dir() else \
        out.with_name(out.name + ".config.json")
    with open(target, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _load_support(path) -> "FeatureSet":
    return l2_normalize(load_feature_table(path))


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    defaults = {
        "dim": 16, "domains": 4, "per_domain": 500, "clusters": 3,
        "angle": 0.6, "shift": 0.3, "noise": 0.12, "seed": 0,
    }
    cfg = _layered(args, defaults)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sets = synth_multidomain(SynthConfig(
        dimension=cfg["dim"], domains=cfg["domains"], per_domain=cfg["per_domain"],
        clusters_per_class=cfg["clusters"], angle=cfg["angle"],
        shift=cfg["shift"], noise=cfg["noise"], seed=cfg["seed"],
    ))
    for i, fset in enumerate(sets):
        save_feature_table(fset, out_dir / f"domain{i}.features")
    _write_effective(out_dir, cfg)
    print(f"wrote {len(sets)} domain files to {out_dir}")
    return 0


def cmd_train(args) -> int:
    defaults = {
        "k": 50, "alpha": 0.01, "beta": 0.01, "eta": 1.0, "temperature": 0.07,
        "scale": 30.0, "margin": 0.5, "lr": 0.01, "batch_size": 128,
        "epochs": 30, "sigma": 0.05, "fine_grouping": "domain_attack", "seed": 0,
    }
    cfg = _layered(args, defaults)
    sources = [_load_support(p) for p in args.inputs]
    result = fit_prototype_bank(sources, TrainConfig(
        k=cfg["k"], alpha=cfg["alpha"], beta=cfg["beta"], eta=cfg["eta"],
        temperature=cfg["temperature"], scale=cfg["scale"],
        margin_init=cfg["margin"], learning_rate=cfg["lr"],
        batch_size=cfg["batch_size"], epochs=cfg["epochs"], seed=cfg["seed"],
        view_sigma=cfg["sigma"], fine_grouping=cfg["fine_grouping"],
    ))
    out = Path(args.out)
    save_prototype_bank(result.bank, out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".losses.csv")
    rows = ["epoch,proto,orth,con_coarse,con_fine,total,margin"]
    for epoch, br, margin in result.history:
        rows.append(
            f"{epoch},{br.proto:.10g},{br.orth:.10g},{br.con_coarse:.10g},"
            f"{br.con_fine:.10g},{br.total:.10g},{margin:.10g}"
        )
    _atomic_write(log_path, "\n".join(rows) + "\n")
    _write_effective(out, cfg)
    print(f"wrote bank to {out} (loss log: {log_path})")
    return 0


def cmd_adapt_free(args) -> int:
    defaults = {
        "epsilon": 0.01, "lam": 100.0, "knn": 3, "max_iter": 1000,
        "outer_iter": 10, "seed": 0,
    }
    cfg = _layered(args, defaults)
    bank = load_prototype_bank(args.bank)
    support = _load_support(args.support)
    ot_cfg = OTConfig(epsilon=cfg["epsilon"], lam=cfg["lam"], knn=cfg["knn"],
                      max_iter=cfg["max_iter"], outer_iter=cfg["outer_iter"])
    n_bona, n_spoof = support.class_counts()
    if args.one_class:
        if n_bona > 0 and n_spoof > 0:
            raise UsageError("--one-class requires single-class support")
        adapted = adapt_one_class(bank, support, ot_cfg)
    else:
        if n_bona == 0 or n_spoof == 0:
            raise UsageError(
                "support holds a single class; rerun with --one-class"
            )
        adapted = adapt_prototypes(bank, support, ot_cfg)

    out = Path(args.out)
    save_prototype_bank(adapted.bank, out)
    sidecar = {
        "transported": {str(k): v for k, v in adapted.transported.items()},
        "per_class": {str(k): v for k, v in adapted.diagnostics.items()},
    }
    _atomic_write(out.with_name(out.name + ".diagnostics.json"),
                  json.dumps(sidecar, indent=2) + "\n")
    _write_effective(out, cfg)
    if args.strict and any(
        not d.get("converged", True) for d in adapted.diagnostics.values()
    ):
        print("transport did not converge", file=sys.stderr)
        return 1
    print(f"wrote adapted bank to {out}")
    return 0


def cmd_adapt_light(args) -> int:
    defaults = {
        "iterations": 100, "lr": 0.01, "epsilon": 0.01, "sigma": 0.05,
        "beta_a": 0.4, "beta_b": 0.4, "seed": 0,
        "no_mixup": False, "no_perturb": False,
    }
    cfg = _layered(args, defaults)
    bank = load_prototype_bank(args.bank)
    support = _load_support(args.support)
    result = fit_light(bank, support, LightTrainConfig(
        iterations=cfg["iterations"], learning_rate=cfg["lr"],
        barycenter=BarycenterConfig(epsilon=cfg["epsilon"], sigma=cfg["sigma"],
                                    beta_a=cfg["beta_a"], beta_b=cfg["beta_b"]),
        seed=cfg["seed"], use_mixup=not cfg["no_mixup"],
        perturb_support=not cfg["no_perturb"],
    ))
    out = Path(args.out)
    save_linear_classifier(result.classifier, out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".losses.csv")
    rows = ["iteration,loss"] + [
        f"{i},{v:.10g}" for i, v in enumerate(result.loss_history)
    ]
    _atomic_write(log_path, "\n".join(rows) + "\n")
    _write_effective(out, cfg)
    print(f"wrote classifier to {out} (loss log: {log_path})")
    return 0


def cmd_mixup_dump(args) -> int:
    defaults = {
        "batches": 3, "epsilon": 0.01, "sigma": 0.05,
        "beta_a": 0.4, "beta_b": 0.4, "seed": 0,
    }
    cfg = _layered(args, defaults)
    bank = load_prototype_bank(args.bank)
    support = _load_support(args.support)
    bc = BarycenterConfig(epsilon=cfg["epsilon"], sigma=cfg["sigma"],
                          beta_a=cfg["beta_a"], beta_b=cfg["beta_b"])
    labels = [0, 1] if args.label == "both" else [int(args.label)]
    from ._rng import stream
    from .features import FeatureSet

    rng = stream(cfg["seed"], "mixup-dump")
    ids, domains, labs, attacks, rows, weights = [], [], [], [], [], []
    for b in range(cfg["batches"]):
        for label in labels:
            batch = sample_mixup_batch(bank, support, label, bc, rng, iteration=b)
            for q in range(batch.points.shape[0]):
                ids.append(f"mix-c{label}-b{b}-q{q}")
                domains.append("mixup")
                labs.append(label)
                attacks.append("" if label == 0 else "synthetic")
                rows.append(batch.points[q])
            weights.append((b, label, batch.weight))
    fset = FeatureSet(bank.dimension, ids, domains, labs, attacks, np.array(rows))
    out = Path(args.out)
    save_feature_table(fset, out)
    with open(out, "a", encoding="utf-8") as fh:
        for b, label, w in weights:
            fh.write(f"# batch={b} class={label} w={w:.10g}\n")
    _write_effective(out, cfg)
    print(f"wrote {len(ids)} synthetic points to {out}")
    return 0


def _read_scores_csv(path):
    scores, labels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#") or (lineno == 1 and row[1:2] == ["score"]):
                continue
            if len(row) != 3:
                raise UsageError(f"{path}:{lineno}: expected 'id,score,label'")
            scores.append(float(row[1]))
            labels.append(int(row[2]))
    return np.array(scores), np.array(labels)


def cmd_eval(args) -> int:
    provided = [p for p in (args.bank, args.classifier, args.scores) if p]
    if len(provided) != 1:
        raise UsageError("provide exactly one of --bank, --classifier, --scores")
    if args.scores:
        scores, labels = _read_scores_csv(args.scores)
    else:
        if not args.features:
            raise UsageError("--features is required with --bank/--classifier")
        feats = _load_support(args.features)
        labels = feats.labels
        if args.bank:
            scores = decision_scores(feats.vectors, load_prototype_bank(args.bank))
        else:
            scores = load_linear_classifier(args.classifier).scores(feats.vectors)
    sset = ScoreSet(np.asarray(scores, dtype=float), np.asarray(labels, dtype=int))
    report = metric_report(sset)
    out = Path(args.out)
    _atomic_write(out, json.dumps(report.as_dict(), indent=2) + "\n")
    if args.roc:
        lines = ["fpr,tpr,threshold"] + [
            f"{fpr:.10g},{tpr:.10g},{thr:.10g}" for fpr, tpr, thr in roc_points(sset)
        ]
        _atomic_write(Path(args.roc), "\n".join(lines) + "\n")
    print(json.dumps(report.as_dict()))
    return 0


def cmd_sweep(args) -> int:
    defaults = {
        "domains": 4, "dim": 16, "per_domain": 500, "clusters": 3,
        "angle": 0.6, "shift": 0.3, "noise": 0.12, "k": 8, "epochs": 20,
        "iterations": 100, "lr": 0.01, "epsilon": 0.01, "lam": 100.0,
        "knn": 3, "sigma": 0.05, "beta_a": 0.4, "beta_b": 0.4,
        "seeds": 5, "shots": "5,10,20,50", "methods": ",".join(DEFAULT_SWEEP_METHODS),
        "folds": "all", "seed": 0,
    }
    cfg = _layered(args, defaults)
    shots_list = [int(s) for s in str(cfg["shots"]).split(",") if s]
    methods = tuple(m for m in str(cfg["methods"]).split(",") if m)
    folds = () if cfg["folds"] == "all" else tuple(
        int(f) for f in str(cfg["folds"]).split(",")
    )
    proto_cfg = ProtocolConfig(
        domains=cfg["domains"], dim=cfg["dim"], per_domain=cfg["per_domain"],
        clusters_per_class=cfg["clusters"], angle=cfg["angle"], shift=cfg["shift"],
        noise=cfg["noise"], k=cfg["k"], epochs=cfg["epochs"],
        iterations=cfg["iterations"], light_lr=cfg["lr"], epsilon=cfg["epsilon"],
        lam=cfg["lam"], knn=cfg["knn"], sigma=cfg["sigma"],
        beta_a=cfg["beta_a"], beta_b=cfg["beta_b"], folds=folds,
    )
    seeds = [cfg["seed"] + i for i in range(cfg["seeds"])]

    threads = int(os.environ.get("PROTO_OT_THREADS", "1") or "1")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(
                lambda sd: run_protocol(proto_cfg, shots_list, methods, seeds=[sd]),
                seeds,
            ))
        cells = [c for chunk in chunks for c in chunk]
        cells.sort(key=lambda c: (c.shots, c.method, c.seed))
    else:
        cells = run_protocol(proto_cfg, shots_list, methods, seeds=seeds)

    lines = ["shots,method,seed,hter,auc,tpr_at_fpr1"]
    for c in cells:
        lines.append(
            f"{c.shots},{c.method},{c.seed},{c.report.hter:.10g},"
            f"{c.report.auc:.10g},{c.report.tpr_at_fpr1:.10g}"
        )
    out = Path(args.out)
    _atomic_write(out, "\n".join(lines) + "\n")
    _write_effective(out, cfg)
    print(f"wrote {len(cells)} sweep rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.add_argument("--seed", type=int)
    p.add_argument("--strict", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proto-ot",
        description="Prototype classifier with optimal-transport few-shot adaptation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic multi-domain feature tables")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--domains", type=int)
    p.add_argument("--per-domain", dest="per_domain", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--angle", type=float)
    p.add_argument("--shift", type=float)
    p.add_argument("--noise", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a prototype bank on feature tables")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--fine-grouping", dest="fine_grouping",
                   choices=["domain_attack", "attack_only"])
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt-free", help="training-free prototype transport")
    p.add_argument("--bank", required=True)
    p.add_argument("--support", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--one-class", dest="one_class", action="store_true")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--knn", type=int)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--outer-iter", dest="outer_iter", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_adapt_free)

    p = sub.add_parser("adapt-light", help="lightweight classifier training")
    p.add_argument("--bank", required=True)
    p.add_argument("--support", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--beta-a", dest="beta_a", type=float)
    p.add_argument("--beta-b", dest="beta_b", type=float)
    p.add_argument("--no-mixup", dest="no_mixup", action="store_const", const=True)
    p.add_argument("--no-perturb", dest="no_perturb", action="store_const", const=True)
    _add_common(p)
    p.set_defaults(func=cmd_adapt_light)

    p = sub.add_parser("mixup-dump", help="dump synthetic mixup batches")
    p.add_argument("--bank", required=True)
    p.add_argument("--support", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", choices=["0", "1", "both"], default="both")
    p.add_argument("--batches", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--beta-a", dest="beta_a", type=float)
    p.add_argument("--beta-b", dest="beta_b", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_mixup_dump)

    p = sub.add_parser("eval", help="compute HTER / AUC / TPR@FPR=1%")
    p.add_argument("--features")
    p.add_argument("--bank")
    p.add_argument("--classifier")
    p.add_argument("--scores", help="score CSV 'id,score,label' (passthrough)")
    p.add_argument("--out", required=True)
    p.add_argument("--roc")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="few-shot scaling sweep over methods and seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int)
    p.add_argument("--shots")
    p.add_argument("--methods")
    p.add_argument("--folds")
    p.add_argument("--domains", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--per-domain", dest="per_domain", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--angle", type=float)
    p.add_argument("--shift", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--knn", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--beta-a", dest="beta_a", type=float)
    p.add_argument("--beta-b", dest="beta_b", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, FeatureTableError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
