"""Command-line entry point.

Exit codes: 0 success, 2 usage/validation, 3 numerical failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import complexity
from . import evaluate as ev
from .checkpoint import estimate_checkpoint_bytes, envelope_bytes, load_checkpoint, save_checkpoint, stored_arrays
from .config import ExperimentConfig, load_config, save_config
from .data import SyntheticSpec, generate_synthetic, load_cohort, save_cohort
from .errors import BicephError, TrainingError, ValidationError
from .model import METRIC_COLUMNS, BicephNet, fit, init_state, predict_slices, task_classes

log = logging.getLogger("bicephnet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _parse_ints(text: str) -> list:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _config_from_args(args) -> ExperimentConfig:
    config = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "out", None):
        config.out_dir = args.out
    if getattr(args, "epochs", None) is not None:
        config.train.epochs = args.epochs
    return config.resolve()


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    spec = SyntheticSpec.from_dict(config.data.to_dict())
    overrides = {
        "subjects_per_class": args.subjects_per_class,
        "m": args.m,
        "input_dim": args.input_dim,
        "class_separation": args.class_separation,
        "subject_spread": args.subject_spread,
        "slice_noise": args.slice_noise,
        "entanglement": args.entanglement,
    }
    for k, v in overrides.items():
        if v is not None:
            setattr(spec, k, v)
    if args.seed is not None:
        spec.seed = args.seed
    if args.task:
        config.task = args.task
    spec.classes = task_classes(config.task)
    spec.validate()
    cohort = generate_synthetic(spec)
    out = _out_dir(args.out or config.out_dir)
    path = out / "cohort.json"
    save_cohort(cohort, path)
    print(f"wrote {path} ({len(cohort)} subjects x {cohort.m} slices, input_dim={cohort.input_dim})")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.resume:
        config, net, state = load_checkpoint(args.resume)
        if args.epochs is not None:
            config.train.epochs = args.epochs
        if args.out:
            config.out_dir = args.out
    else:
        config = _config_from_args(args)
        net = state = None
    splits = config.splits()
    train, val = splits["train"], splits["val"]
    if net is None:
        net = BicephNet(config.biceph_config(train.input_dim), seed=config.seed)
    out = _out_dir(config.out_dir)
    save_config(config, out / "config.json")
    metrics_path = out / "metrics.csv"
    records = []
    if state is not None and metrics_path.exists():
        # keep the rows written before the resumed epoch
        with open(metrics_path, newline="") as fh:
            records = [r for r in csv.DictReader(fh) if int(r["epoch"]) <= state.epoch]

    live = {"state": state}

    def on_epoch_end(epoch, net_, st, rec, improved):
        live["state"] = st
        records.append(rec)
        ev.write_metrics_csv(metrics_path, records, METRIC_COLUMNS)
        if improved:
            save_checkpoint(out / "checkpoint_best.json", config, net_, st)
        log.info("epoch %d lr=%.1e val_ce=%.4f val_subject_acc=%.3f", epoch, float(rec["learning_rate"]),
                 float(rec["val_ce"]), float(rec["val_subject_acc"]))

    fit(net, train, val, config.train, config.sampler, config.classes, config.seed, state, on_epoch_end)
    final = out / "checkpoint_final.json"
    save_checkpoint(final, config, net, live["state"])
    if not (out / "checkpoint_best.json").exists():
        save_checkpoint(out / "checkpoint_best.json", config, net, live["state"])
    last = records[-1]
    print(
        f"trained {config.train.epochs} epochs: val_ce={float(last['val_ce']):.4f} "
        f"val_slice_acc={float(last['val_slice_acc']):.3f} val_subject_acc={float(last['val_subject_acc']):.3f}"
    )
    print(f"wrote {metrics_path}, {final}")
    return EXIT_OK


def _load_for_eval(args):
    config, net, _ = load_checkpoint(args.checkpoint)
    if getattr(args, "cohort", None):
        cohort = load_cohort(args.cohort).restrict(config.classes)
        name = "cohort"
    else:
        cohort = config.cohort()
        name = args.split
        if args.split != "all":
            cohort = config.splits(cohort)[args.split]
    if len(cohort) == 0:
        raise ValidationError(f"split {name!r} has no subjects")
    return config, net, cohort, name


def _predict(net, cohort, classes):
    X, sids, labels, sidx = cohort.arrays(classes)
    P, pred, emb, _ = predict_slices(net, X)
    return sids, labels, sidx, P, pred, emb


def cmd_evaluate(args) -> int:
    config, net, cohort, name = _load_for_eval(args)
    classes = config.classes
    sids, labels, _, _, pred, _ = _predict(net, cohort, classes)
    verdicts = ev.subject_verdicts(sids, labels, pred, len(classes))
    report = {
        "split": name,
        "classes": list(classes),
        "n_subjects": len(verdicts),
        "n_slices": int(len(pred)),
        "slice_accuracy": ev.slice_accuracy(pred, labels),
        "subject_accuracy": ev.subject_accuracy(verdicts),
        "slice_confusion": ev.confusion_counts(labels, pred, len(classes)),
        "subject_confusion": ev.confusion_counts(
            [v.true_class for v in verdicts], [v.predicted_class for v in verdicts], len(classes)
        ),
        "subjects": [
            {"id": v.subject_id, "true": classes[v.true_class], "predicted": classes[v.predicted_class],
             "votes": v.votes, "tie": v.tie}
            for v in verdicts
        ],
    }
    out = _out_dir(args.out or Path(args.checkpoint).parent)
    path = out / f"evaluate_{name}.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps({k: report[k] for k in ("split", "n_subjects", "slice_accuracy", "subject_accuracy")}))
    return EXIT_OK


def cmd_interpret(args) -> int:
    config, net, cohort, name = _load_for_eval(args)
    classes = config.classes
    ref_cohort = config.splits()[args.reference]
    _, ref_labels, _, _, _, ref_emb = _predict(net, ref_cohort, classes)
    sids, labels, _, _, pred, emb = _predict(net, cohort, classes)
    wanted = args.subjects.split(",") if args.subjects else list(dict.fromkeys(sids))
    missing = set(wanted) - set(sids)
    if missing:
        raise ValidationError(f"subjects not in split {name!r}: {sorted(missing)}")
    reports = []
    for sid in wanted:
        rows = sids == sid
        r = ev.neighborhood_report(sid, classes[int(labels[rows][0])], emb[rows], ref_emb, ref_labels, classes, args.k)
        verdict = ev.aggregate_subject(pred[rows], len(classes))
        reports.append((r, classes[verdict.predicted_class]))
    out = _out_dir(args.out or Path(args.checkpoint).parent)
    payload = {
        "split": name,
        "reference": args.reference,
        "k": list(args.k),
        "subjects": [dict(r.to_dict(), predicted=p) for r, p in reports],
    }
    (out / "interpret.json").write_text(json.dumps(payload, indent=2) + "\n")
    table = ev.render_neighborhood_table([r for r, _ in reports])
    (out / "interpret.txt").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    config, net, cohort, name = _load_for_eval(args)
    classes = config.classes
    sids, labels, sidx, _, _, emb = _predict(net, cohort, classes)
    names = [classes[int(l)] for l in labels]
    out = _out_dir(args.out or Path(args.checkpoint).parent)
    emb_path = out / "embeddings.csv"
    ev.write_embeddings_csv(emb_path, sids, sidx, names, emb)
    print(f"wrote {emb_path} ({len(emb)} rows x {emb.shape[1]} dims)")
    if args.pca:
        result = ev.pca_project(emb, args.pca)
        ev.write_pca_export(out / "pca.csv", out / "pca_variance.json", sids, sidx, names, result)
        print(f"wrote {out / 'pca.csv'}, {out / 'pca_variance.json'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    config = _config_from_args(args)
    input_dim = load_cohort(config.cohort_path).input_dim if config.cohort_path else config.data.input_dim
    bcfg = config.biceph_config(input_dim)
    net = BicephNet(bcfg, seed=config.seed)
    state = init_state(config.train, config.seed)
    # one zero-gradient Adam step materialises the moment buffers a trained checkpoint carries
    grads = {k: np.zeros_like(w) for k, w in net.parameters().items()}
    state.optimizer.apply({k: w.copy() for k, w in net.parameters().items()}, grads, 0.0)
    slots = len(stored_arrays(net, state)) // len(net.parameters())
    env = envelope_bytes(config, net, state)
    reports = {}
    for label, desc in (
        ("biceph", complexity.describe_biceph(bcfg)),
        ("triplet_baseline", complexity.describe_triplet_baseline(bcfg)),
    ):
        reports[label] = complexity.cost_report(desc)
    ckpt = {
        "bytes_per_value": 24,
        "values_per_param": slots,
        "envelope_bytes": env,
        "estimated_bytes": estimate_checkpoint_bytes(config, net, state),
    }
    out = _out_dir(config.out_dir)
    doc = {name: r.to_dict() for name, r in reports.items()}
    doc["checkpoint"] = ckpt
    (out / "cost_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    text = "".join(f"== {name} ==\n{r.to_text()}\n" for name, r in reports.items())
    text += f"checkpoint (JSON text) estimate: {ckpt['estimated_bytes']} bytes\n"
    (out / "cost_report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bicephnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic cohort JSON")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--task")
    g.add_argument("--subjects-per-class", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--input-dim", type=int)
    g.add_argument("--class-separation", type=float)
    g.add_argument("--subject-spread", type=float)
    g.add_argument("--slice-noise", type=float)
    g.add_argument("--entanglement", type=float)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train and write metrics.csv plus checkpoints")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", metavar="CHECKPOINT")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("evaluate", cmd_evaluate, "slice/subject accuracy of a checkpoint on a split"),
        ("interpret", cmd_interpret, "K-nearest-neighbour interpretation table"),
        ("export-embeddings", cmd_export_embeddings, "embedding (and PCA) CSV export"),
    ):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--split", choices=("train", "val", "test", "all"), default="all" if name == "export-embeddings" else "test")
        e.add_argument("--cohort", help="evaluate every subject of this cohort file instead of a split")
        e.add_argument("--out")
        if name == "interpret":
            e.add_argument("--k", type=_parse_ints, default=list(ev.DEFAULT_K_SET))
            e.add_argument("--subjects", help="comma-separated subject ids (default: all in the split)")
            e.add_argument("--reference", choices=("train", "val", "test"), default="train")
        if name == "export-embeddings":
            e.add_argument("--pca", type=int, metavar="D")
        e.set_defaults(func=func)

    a = sub.add_parser("analyze", help="parameter/FLOP/size report")
    a.add_argument("--config")
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BicephError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
