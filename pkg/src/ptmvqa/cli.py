"""Command-line pipelines: synthetic data generation, model selection,
training, evaluation, prediction, and cross-dataset evaluation.

Exit codes: 0 success, 1 usage error, 2 data/validation error. Every
subcommand writes an effective-config snapshot into its output directory so
runs are reproducible from the artifacts alone. PTMVQA_THREADS caps BLAS
parallelism (read at import).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import clustering, evaluation, feature_store, heads, training
from .validation import ValidationError, require

_CFG_DEFAULTS = training.TrainConfig()
# TrainConfig fields settable from files and --set (cluster_spec is derived)
_CFG_FIELDS = {
    f.name: f.type for f in dataclasses.fields(training.TrainConfig)
    if f.name != "cluster_spec"
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"usage error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _dflt(name):
    return getattr(_CFG_DEFAULTS, name)


def _coerce(name: str, raw):
    """Parse a config value from a string or JSON scalar by field type."""
    if name not in _CFG_FIELDS:
        raise KeyError(name)
    current = getattr(_CFG_DEFAULTS, name)
    if isinstance(current, bool):
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes", "on"):
            return True
        if str(raw).lower() in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"config key {name!r} expects a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return str(raw)


def _config_from(args) -> training.TrainConfig:
    """Defaults <- config file <- explicit CLI flags <- --set overrides."""
    cfg = {name: getattr(_CFG_DEFAULTS, name) for name in _CFG_FIELDS}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        require(isinstance(doc, dict), "config file must hold a JSON object")
        for key, value in doc.items():
            if key not in _CFG_FIELDS:
                raise ValidationError(f"unknown config key {key!r} in {args.config}")
            cfg[key] = _coerce(key, value)
    flag_map = {
        "epochs": "epochs", "batch_size": "batch_size", "lr": "base_lr",
        "weight_decay": "weight_decay", "warmup_epochs": "warmup_epochs",
        "margin": "margin", "metric_weight": "metric_weight",
        "embed_dim": "embed_dim", "hidden_dim": "hidden_dim", "k": "clusters",
        "seed": "seed", "train_fraction": "train_fraction",
        "checkpoint_policy": "checkpoint_policy", "weights": "weight_mode",
        "inter": "inter_mode",
    }
    for flag, name in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[name] = _coerce(name, value)
    if getattr(args, "no_intra", False):
        cfg["use_intra"] = False
    if getattr(args, "no_inter", False):
        cfg["inter_mode"] = "none"
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(_usage_error(f"--set expects key=value, got {item!r}"))
        key, _, raw = item.partition("=")
        if key not in _CFG_FIELDS:
            raise SystemExit(_usage_error(f"--set: unknown config key {key!r}"))
        cfg[key] = _coerce(key, raw)
    config = training.TrainConfig(**cfg)
    config.validate()
    return config


def _usage_error(message: str) -> int:
    print(f"usage error: {message}", file=sys.stderr)
    return 1


def _snapshot(outdir: Path, command: str, args_doc: dict,
              config: training.TrainConfig | None = None) -> None:
    doc = {"command": command, "arguments": args_doc}
    if config is not None:
        doc["config"] = {n: getattr(config, n) for n in _CFG_FIELDS}
    (outdir / "effective-config.json").write_text(json.dumps(doc, indent=2) + "\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_weights(bundle, config) -> np.ndarray:
    if config.weight_mode == "uniform":
        return np.ones(len(bundle.tables))
    cached = [bundle.manifest_dbi.get(m) for m in bundle.model_ids()]
    if all(v is not None for v in cached):
        return clustering.model_weights(cached)
    assignment = clustering.assign_clusters(bundle.labels,
                                            config.resolved_cluster_spec())
    scores = [clustering.compute_dbi(t, assignment) for t in bundle.tables]
    return clustering.model_weights(scores)


def _split_bundle(bundle, args, config):
    split_file = getattr(args, "split_file", None)
    if split_file:
        split = json.loads(Path(split_file).read_text())
        out = feature_store.DatasetBundle(
            tables=bundle.tables, labels=bundle.labels, split=split,
            name=bundle.name, manifest_dbi=dict(bundle.manifest_dbi))
        out.validate()
        return out
    return feature_store.split_dataset(bundle, config.train_fraction, config.seed)


def _cmd_gen_synthetic(args) -> int:
    dims = [int(d) for d in str(args.dims).split(",")]
    if len(dims) == 1:
        dims = dims * args.models
    signal = None
    if args.signal is not None:
        signal = [float(s) for s in str(args.signal).split(",")]
    spec = feature_store.SyntheticSpec(
        n_videos=args.videos, n_models=args.models, dims=dims,
        views_per_video=args.views, signal_strength=signal,
        noise_sigma=args.noise_sigma, seed=args.seed,
        direction_seed=args.direction_seed)
    bundle = feature_store.gen_synthetic(spec)

    out = _outdir(args)
    model_entries = []
    for table in bundle.tables:
        fname = f"{table.model_id}.ptmf"
        feature_store.write_feature_file(table, out / fname)
        model_entries.append({"model_id": table.model_id, "path": fname})
    feature_store.write_labels_file(bundle.labels, out / "labels.csv")
    feature_store.write_manifest(out / "manifest.json", name=bundle.name,
                                 labels_path="labels.csv", models=model_entries)
    _snapshot(out, "gen-synthetic", {
        "videos": args.videos, "models": args.models, "views": args.views,
        "dims": dims, "signal": spec.resolved_signal(),
        "noise_sigma": args.noise_sigma, "seed": args.seed,
        "direction_seed": args.direction_seed})
    print(f"wrote {len(bundle.tables)} feature files + labels + manifest to {out}")
    return 0


def _cmd_select_models(args) -> int:
    bundle = feature_store.load_dataset(args.manifest)
    spec = clustering.ClusterSpec.preset(args.k)
    assignment = clustering.assign_clusters(bundle.labels, spec)
    reports = [clustering.build_dbi_report(t, assignment) for t in bundle.tables]
    scores = [(r.model_id, r.dbi) for r in reports]
    if args.max is not None or args.max_dbi is not None:
        selected = clustering.select_models(scores, max_models=args.max,
                                            max_dbi=args.max_dbi)
    else:
        selected = sorted(scores, key=lambda item: (item[1], item[0]))
    rank_of = {model_id: i for i, (model_id, _) in enumerate(selected)}

    out = _outdir(args)
    by_id = {r.model_id: r for r in reports}
    doc = {"k": args.k, "models": [
        {"model_id": m, "dbi": by_id[m].dbi, "weight": by_id[m].weight,
         "rank": rank_of[m], "cluster_sizes": by_id[m].cluster_sizes}
        for m, _ in selected]}
    (out / "dbi-report.json").write_text(json.dumps(doc, indent=2) + "\n")
    _snapshot(out, "select-models", {"manifest": str(args.manifest), "k": args.k,
                                     "max": args.max, "max_dbi": args.max_dbi})
    if args.update_manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        dbi_map = {r.model_id: r.dbi for r in reports}
        for entry in manifest["models"]:
            entry["dbi"] = dbi_map[entry["model_id"]]
        Path(args.manifest).write_text(json.dumps(manifest, indent=2) + "\n")
    for model_id, score in selected:
        print(f"rank={rank_of[model_id]} model={model_id} dbi={score:.6f} "
              f"weight={by_id[model_id].weight:.6f}")
    return 0


def _cmd_train(args) -> int:
    config = _config_from(args)
    bundle = feature_store.load_dataset(args.manifest)
    bundle = _split_bundle(bundle, args, config)
    weights = _resolve_weights(bundle, config)
    checkpoint, history = training.train(bundle, config, weights)

    out = _outdir(args)
    heads.save_checkpoint(checkpoint, out / "checkpoint.ptmc")
    (out / "split.json").write_text(json.dumps(bundle.split, indent=2, sort_keys=True) + "\n")
    (out / "training-log.txt").write_text(
        "".join(rec.log_line() + "\n" for rec in history))
    _snapshot(out, "train", {"manifest": str(args.manifest),
                             "weights": config.weight_mode}, config)
    if history and history[-1].test_plcc is not None:
        last = history[-1]
        print(f"final test_plcc={last.test_plcc:.4f} test_srcc={last.test_srcc:.4f}")
    print(f"checkpoint written to {out / 'checkpoint.ptmc'}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _config_from(args)
    checkpoint = heads.load_checkpoint(args.checkpoint)
    bundle = feature_store.load_dataset(args.manifest)
    split = None if args.split == "all" else args.split
    if split is not None:
        bundle = _split_bundle(bundle, args, config)
    report = evaluation.evaluate(checkpoint, bundle, split=split,
                                 view_mode=args.view_mode)
    out = _outdir(args)
    (out / "report.csv").write_text(
        evaluation.EvalReport.csv_header() + "\n" + report.csv_row() + "\n")
    _snapshot(out, "evaluate", {"manifest": str(args.manifest),
                                "checkpoint": str(args.checkpoint),
                                "split": args.split, "view_mode": args.view_mode})
    print(f"dataset={report.dataset} n={report.n_videos} plcc={report.plcc:.4f} "
          f"srcc={report.srcc:.4f} mean={report.mean:.4f}")
    return 0


def _cmd_predict(args) -> int:
    checkpoint = heads.load_checkpoint(args.checkpoint)
    bundle = feature_store.load_dataset(args.manifest)
    tables = evaluation._checkpoint_tables(checkpoint, bundle)
    out = _outdir(args)
    lines = ["video_id,score"]
    for video in bundle.labels.video_ids():
        score = evaluation.predict_video(checkpoint, tables, video, args.view_mode)
        lines.append(f"{video},{score:.6f}")
    (out / "predictions.csv").write_text("\n".join(lines) + "\n")
    _snapshot(out, "predict", {"manifest": str(args.manifest),
                               "checkpoint": str(args.checkpoint),
                               "view_mode": args.view_mode})
    print(f"wrote {len(lines) - 1} predictions to {out / 'predictions.csv'}")
    return 0


def _cmd_cross_evaluate(args) -> int:
    checkpoint = heads.load_checkpoint(args.checkpoint)
    report = evaluation.cross_evaluate(checkpoint, args.manifest,
                                       view_mode=args.view_mode)
    out = _outdir(args)
    (out / "report.csv").write_text(
        evaluation.EvalReport.csv_header() + "\n" + report.csv_row() + "\n")
    _snapshot(out, "cross-evaluate", {"manifest": str(args.manifest),
                                      "checkpoint": str(args.checkpoint),
                                      "view_mode": args.view_mode})
    note = f" [{report.note}]" if report.note else ""
    print(f"dataset={report.dataset} n={report.n_videos} plcc={report.plcc:.4f} "
          f"srcc={report.srcc:.4f} mean={report.mean:.4f}{note}")
    return 0


def _add_config_flags(p: _Parser) -> None:
    p.add_argument("--config", help="JSON file with training configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--epochs", type=int, help=f"training epochs (default: {_dflt('epochs')})")
    p.add_argument("--batch-size", type=int, dest="batch_size",
                   help=f"batch size (default: {_dflt('batch_size')})")
    p.add_argument("--lr", type=float, help=f"base learning rate (default: {_dflt('base_lr')})")
    p.add_argument("--weight-decay", type=float, dest="weight_decay",
                   help=f"decoupled weight decay (default: {_dflt('weight_decay')})")
    p.add_argument("--warmup-epochs", type=int, dest="warmup_epochs",
                   help=f"warmup epochs (default: {_dflt('warmup_epochs')})")
    p.add_argument("--margin", type=float,
                   help=f"triplet hinge margin (default: {_dflt('margin')})")
    p.add_argument("--metric-weight", type=float, dest="metric_weight",
                   help=f"balance of the metric losses (default: {_dflt('metric_weight')})")
    p.add_argument("--embed-dim", type=int, dest="embed_dim",
                   help=f"shared embedding width (default: {_dflt('embed_dim')})")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim",
                   help=f"head hidden width (default: {_dflt('hidden_dim')})")
    p.add_argument("--k", type=int, choices=(2, 4, 6),
                   help=f"number of quality clusters (default: {_dflt('clusters')})")
    p.add_argument("--seed", type=int, help=f"random seed (default: {_dflt('seed')})")
    p.add_argument("--train-fraction", type=float, dest="train_fraction",
                   help=f"train split fraction (default: {_dflt('train_fraction')})")
    p.add_argument("--checkpoint-policy", choices=training.CHECKPOINT_POLICIES,
                   dest="checkpoint_policy",
                   help=f"which iteration to keep (default: {_dflt('checkpoint_policy')})")
    p.add_argument("--weights", choices=("dbi", "uniform"),
                   help=f"aggregation weighting (default: {_dflt('weight_mode')})")
    p.add_argument("--no-intra", action="store_true", dest="no_intra",
                   help="disable the intra-consistency loss")
    p.add_argument("--no-inter", action="store_true", dest="no_inter",
                   help="disable the inter-divisibility loss")
    p.add_argument("--inter", choices=("centroid", "sample-triplet"),
                   help=f"inter loss form (default: {_dflt('inter_mode')})")


def build_parser() -> _Parser:
    parser = _Parser(prog="ptmvqa",
                     description="Video quality assessment over frozen "
                                 "pretrained-model features")
    sub = parser.add_subparsers(dest="command", required=True,
                              parser_class=_Parser)

    p = sub.add_parser("gen-synthetic",
                       help="generate a synthetic feature dataset")
    p.add_argument("--videos", type=int, default=200)
    p.add_argument("--models", type=int, default=2)
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--dims", default="16",
                   help="per-model feature dims, comma separated or one value for all")
    p.add_argument("--signal", default=None,
                   help="per-model signal strengths (default: 1.0 then 0.0)")
    p.add_argument("--noise-sigma", type=float, default=0.05, dest="noise_sigma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--direction-seed", type=int, default=None, dest="direction_seed")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("select-models",
                       help="rank models by Davies-Bouldin score")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, choices=(2, 4, 6), default=_dflt("clusters"))
    p.add_argument("--max", type=int, default=None, help="keep the best N models")
    p.add_argument("--max-dbi", type=float, default=None, dest="max_dbi",
                   help="keep models with score <= threshold")
    p.add_argument("--update-manifest", action="store_true", dest="update_manifest",
                   help="cache the scores in the manifest's dbi fields")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_select_models)

    p = sub.add_parser("train", help="train the heads")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split-file", dest="split_file",
                   help="JSON split map to reuse instead of splitting by seed")
    _add_config_flags(p)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate",
                       help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--view-mode", choices=("score", "feature"), default="score",
                   dest="view_mode")
    p.add_argument("--split-file", dest="split_file")
    _add_config_flags(p)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("predict",
                       help="write per-video scores for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--view-mode", choices=("score", "feature"), default="score",
                   dest="view_mode")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("cross-evaluate",
                       help="evaluate a checkpoint on a foreign dataset (no split)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--view-mode", choices=("score", "feature"), default="score",
                   dest="view_mode")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_cross_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
