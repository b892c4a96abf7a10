"""Command-line entry point: ``simlearn <subcommand> ...``.

Exit codes: 0 success, 1 usage error (help is printed), 2 data error.
Every output gets a ``*.manifest.json`` next to it (``manifest.json`` inside
output directories) recording the resolved flags and input digests; passing
that file back through ``--config`` replays the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings

from . import __version__
from .exceptions import DataError, SimLearnError

MODEL_CHOICES = ("gru", "sa-gru", "sa_gru", "rf")
INPUT_FLAGS = ("log", "sequences", "labels", "features", "model", "attributes", "schema", "config")


class UsageError(Exception):
    def __init__(self, message, parser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self)


def _csv_ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _key_values(text):
    out = {}
    for part in filter(None, text.split(",")):
        k, sep, v = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected key=value pairs, got {text!r}")
        out[k.strip()] = float(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys override flags (or a manifest)")
    common.add_argument("--jobs", type=int, default=None, help="parallel jobs (default: cores)")
    common.add_argument("--seed", type=int, default=0, help="master seed")

    parser = _Parser(prog="simlearn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"simlearn {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--schema", default="beers_law", choices=("beers_law", "capacitor"))
    p.add_argument("--n", type=int, default=254)
    p.add_argument("--label1-rate", type=float, default=0.44)
    p.add_argument("--signal", type=float, default=0.8)
    p.add_argument("--median-actions", type=float, default=36.0)
    p.add_argument("--groups", type=_key_values, default=None, help="e.g. A=0.7,B=0.3")
    p.add_argument("--group-noise", type=_key_values, default=None, help="e.g. B=0.5")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("ingest", parents=[common], help="log -> filtered event sequences")
    p.add_argument("--log", required=True)
    p.add_argument("--break-fraction", type=float, default=0.6)
    p.add_argument("--out", required=True)

    p = sub.add_parser("featurize", parents=[common], help="sequences -> feature file")
    p.add_argument("--sequences", required=True)
    p.add_argument("--labels", required=True, help="CSV with student_id and ranking or label")
    p.add_argument("--schema", default="beers_law", help="builtin name or schema JSON path")
    p.add_argument("--mode", default="sa", choices=("sa", "span"))
    p.add_argument("--truncate", type=int, default=None)
    p.add_argument("--norm-window", default="truncated", choices=("truncated", "full"))
    p.add_argument("--out", required=True)

    def neural_flags(p):
        p.add_argument("--epochs", type=int, default=30)
        p.add_argument("--cells", type=int, default=32)
        p.add_argument("--dropout", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=16)
        p.add_argument("--lr", type=float, default=1e-3)

    p = sub.add_parser("train", parents=[common], help="fit one model on all students")
    p.add_argument("--model", required=True, choices=MODEL_CHOICES)
    p.add_argument("--features", required=True)
    neural_flags(p)
    p.add_argument("--n-trees", type=int, default=11)
    p.add_argument("--criterion", default="gini", choices=("gini", "entropy"))
    p.add_argument("--max-depth", type=int, default=7)
    p.add_argument("--min-samples-split", type=int, default=5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="cross-validated AUC report")
    p.add_argument("--model", required=True, choices=MODEL_CHOICES)
    p.add_argument("--features", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seeds", type=int, default=None, help="default 60 neural, 1 rf")
    p.add_argument("--attributes", default=None, help="CSV of student attributes")
    p.add_argument("--group-by", default=None, help="attribute column for group AUC")
    neural_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("early", parents=[common], help="early-prediction AUC per horizon")
    p.add_argument("--model", required=True, choices=("gru", "sa-gru", "sa_gru"))
    p.add_argument("--features", required=True)
    p.add_argument("--horizons", type=_csv_ints, default=[30, 40, 50, 60])
    p.add_argument("--short-policy", default="pad", choices=("pad", "cascade"))
    p.add_argument("--norm-window", default="truncated", choices=("truncated", "full"))
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seeds", type=int, default=10)
    neural_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("attention", parents=[common], help="attention heatmap from an sa-gru")
    p.add_argument("--model", required=True, help="sa-gru checkpoint")
    p.add_argument("--features", required=True)
    p.add_argument("--horizon", type=int, default=None, help="default 150 beers_law, 100 capacitor")
    p.add_argument("--format", default="svg", choices=("svg", "csv"))
    p.add_argument("--att-norm", default="l1", choices=("l1", "minmax"))
    p.add_argument("--out", required=True)
    return parser


def _config_argv(path, command, parser) -> list[str]:
    """Turn a config (or manifest) document into trailing ``--flag value`` pairs."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot read config {path}: {e}", parser) from e
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object", parser)
    if "flags" in doc and "command" in doc:
        if doc["command"] != command:
            raise UsageError(f"manifest is for {doc['command']!r}, not {command!r}", parser)
        doc = doc["flags"]
    out = []
    for key, value in doc.items():
        if key in ("config", "command") or value is None:
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, dict):
            value = ",".join(f"{k}={v}" for k, v in value.items())
        out += [flag, str(value)]
    return out


def parse_args(argv):
    parser = build_parser()
    argv = list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and argv and argv[0] in COMMANDS:
        sub = parser._subparsers._group_actions[0].choices[argv[0]]
        argv = argv + _config_argv(known.config, argv[0], sub)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required", parser)
    if args.jobs is None:
        args.jobs = os.cpu_count() or 1
    return args


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, args, argv, outputs) -> None:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "config")}
    # the job count never changes results; leave it out so manifests compare equal
    flags.pop("jobs", None)
    inputs = {}
    for key in INPUT_FLAGS:
        value = getattr(args, key, None)
        if isinstance(value, str) and os.path.isfile(value):
            inputs[value] = sha256(value)
    doc = {"command": args.command, "argv": list(argv), "flags": flags, "seed": args.seed,
           "inputs": inputs, "outputs": sorted(outputs), "version": __version__}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest_for(out) -> str:
    return os.path.join(out, "manifest.json") if os.path.isdir(out) else out + ".manifest.json"


def _sibling(out, suffix) -> str:
    stem, _ = os.path.splitext(out)
    return f"{stem}_{suffix}.csv"


def _variant(model: str) -> str:
    return "sa_gru" if model in ("sa-gru", "sa_gru") else model


def _hyper(args) -> dict:
    hyper = {"epochs": args.epochs, "cells": args.cells, "batch_size": args.batch_size,
             "learning_rate": args.lr}
    if args.dropout is not None:
        hyper["dropout"] = args.dropout
    return hyper


def cmd_synth(args) -> list[str]:
    from .synth import GeneratorConfig, generate_cohort

    cfg = GeneratorConfig(schema=args.schema, n_students=args.n, label1_rate=args.label1_rate,
                          signal_strength=args.signal, median_actions=args.median_actions,
                          seed=args.seed)
    if args.groups:
        cfg.groups = args.groups
    if args.group_noise:
        cfg.group_noise = args.group_noise
    cohort = generate_cohort(cfg)
    cohort.write(args.out)
    return [os.path.join(args.out, n) for n in ("log.jsonl", "labels.csv", "attributes.csv")]


def cmd_ingest(args) -> list[str]:
    from .ingest import ingest, read_log, write_sequences

    seqs = ingest(read_log(args.log), args.break_fraction)
    write_sequences(seqs, args.out)
    return [args.out]


def cmd_featurize(args) -> list[str]:
    from .features import build_feature_set
    from .ingest import read_sequences
    from .schema import categorize, label_ranking, resolve_schema
    from .synth import read_labels

    schema = resolve_schema(args.schema)
    seqs = read_sequences(args.sequences)
    table = read_labels(args.labels)
    labels = []
    for s in seqs:
        if s.student_id not in table:
            raise DataError(f"no label for student {s.student_id!r}")
        ranking, label = table[s.student_id]
        labels.append(label_ranking(ranking, schema) if ranking else label)
    cats = [categorize(s, schema) for s in seqs]
    fs = build_feature_set(cats, labels, schema, args.mode, args.truncate, args.norm_window)
    fs.save(args.out)
    return [args.out]


def _load_features(path):
    from .features import FeatureSet

    return FeatureSet.load(path)


def cmd_train(args) -> list[str]:
    fs = _load_features(args.features)
    extra = {"schema": fs.meta.get("schema"), "feature_names": fs.feature_names}
    if args.model == "rf":
        from .forest import RandomForest, save_forest

        rf = RandomForest(args.n_trees, args.criterion, args.max_depth, args.min_samples_split,
                          random_state=args.seed).fit(fs.span_matrix(), fs.labels)
        save_forest(rf.trees_, args.out, {"params": rf.get_params(), "n_features": rf.n_features_in_,
                                          **extra})
        return [args.out]
    from .evaluation import DEFAULT_DROPOUT
    from .nn import estimator_for, save_checkpoint

    hyper = _hyper(args)
    hyper.setdefault("dropout", DEFAULT_DROPOUT.get(fs.meta.get("schema"), 0.02))
    est = estimator_for(_variant(args.model), random_state=args.seed, **hyper)
    est.fit(fs.matrices, fs.labels)
    save_checkpoint(est.model_, args.out, extra)
    return [args.out]


def _write_report(rep, args) -> list[str]:
    rep.write_csv(args.out)
    outs = [args.out, _sibling(args.out, "summary"), _sibling(args.out, "predictions")]
    rep.write_summary(outs[1])
    rep.write_predictions(outs[2])
    return outs


def cmd_evaluate(args) -> list[str]:
    from .evaluation import FULL, cv_seeded_nn, make_folds, nested_cv_rf
    from .synth import read_attributes

    fs = _load_features(args.features)
    plan = make_folds(fs.labels, args.folds, args.seed, fs.student_ids)
    model = _variant(args.model)
    if model == "rf":
        rep = nested_cv_rf(fs.span_matrix(), fs.labels, plan, seeds=args.seeds or 1,
                           master_seed=args.seed, n_jobs=args.jobs)
    else:
        rep = cv_seeded_nn(fs, model, plan, seeds=args.seeds or 60, hyper=_hyper(args),
                           master_seed=args.seed, n_jobs=args.jobs)
    outs = _write_report(rep, args)
    if args.attributes and args.group_by:
        attrs = read_attributes(args.attributes)
        groups = {}
        for sid in fs.student_ids:
            if sid not in attrs or args.group_by not in attrs[sid]:
                raise DataError(f"student {sid!r} has no {args.group_by!r} attribute")
            groups[sid] = attrs[sid][args.group_by]
        per_group = rep.pooled_auc(model, FULL, groups=groups)
        path = _sibling(args.out, "groups")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"model,{args.group_by},auc\n")
            for g, v in per_group.items():
                fh.write(f"{model},{g},{v!r}\n")
        outs.append(path)
    return outs


def cmd_early(args) -> list[str]:
    from .evaluation import early_protocol, make_folds

    fs = _load_features(args.features)
    plan = make_folds(fs.labels, args.folds, args.seed, fs.student_ids)
    rep = early_protocol(fs, _variant(args.model), plan, args.horizons, seeds=args.seeds,
                         hyper=_hyper(args), master_seed=args.seed, n_jobs=args.jobs,
                         short_policy=args.short_policy, norm_window=args.norm_window)
    return _write_report(rep, args)


def cmd_attention(args) -> list[str]:
    from .interpret import DISPLAY_HORIZON, attention_heatmap, export_heatmap
    from .nn import load_checkpoint

    try:
        model, _ = load_checkpoint(args.model)
    except (KeyError, ValueError) as e:
        raise DataError(f"{args.model}: {e}") from e
    fs = _load_features(args.features)
    if fs.mode != "sa":
        raise DataError("attention needs state-action features")
    T = args.horizon or DISPLAY_HORIZON.get(fs.meta.get("schema"), 150)
    h = attention_heatmap(model, fs.matrices, T, fs.feature_names, args.att_norm)
    export_heatmap(h, args.format, args.out)
    return [args.out]


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "featurize": cmd_featurize,
            "train": cmd_train, "evaluate": cmd_evaluate, "early": cmd_early,
            "attention": cmd_attention}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        e.parser.print_help(sys.stderr)
        print(f"\nerror: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            outputs = COMMANDS[args.command](args)
        write_manifest(_manifest_for(args.out), args, argv, outputs)
    except (SimLearnError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
