"""Command-line interface.

Subcommands: scan, train, eval, sweep, fewshot, bench, report.  Every flag
has a config-file equivalent (see config.py for the grammar); precedence is
flag > LEANCNN_* environment variable > --config file > built-in default.

Exit codes: 0 success, 1 usage/configuration error, 2 data or file-format
error, 3 numeric divergence.  Failures print a single machine-parsable line
to stderr ("usage error: ...", "data error: ...", "divergence error: ...").
"""

import argparse
import datetime
import json
import os
import sys

from . import __version__, backend, config as config_mod
from .bench import (BenchConfig, BenchReport, compare_kernel_backends,
                    literature_entries, time_inference, time_training)
from .checkpoint import load as load_checkpoint
from .data import (ImageDataset, PreprocessConfig, Subset, binarize_labels,
                   scan_dataset, split_manifest)
from .errors import (ConfigError, DataError, DivergenceError, FormatError,
                     ShapeError, ValidationError)
from .metrics import render_report, report_from_dict
from .models import ModelSpec, build, published_count_note
from .train import (TrainConfig, evaluate, few_shot_experiment, lr_sweep,
                    train)

# class folder names treated as "no tumor" when --binarize auto is used
KNOWN_NEGATIVE_CLASSES = {"no", "notumor", "negative", "normal", "healthy"}

_thread_limiter = None  # keeps the threadpoolctl context alive process-wide


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns exit codes."""

    def error(self, message):
        raise ConfigError(message)


def _iso_now():
    return datetime.datetime.now(datetime.timezone.utc) \
        .strftime("%Y-%m-%dT%H:%M:%SZ")


def _single_line(msg):
    return " ".join(str(msg).split())


def unique_run_dir(base):
    """base if unused, else base-2, base-3, ...; never overwrites."""
    if not os.path.exists(base):
        return base
    n = 2
    while os.path.exists(f"{base}-{n}"):
        n += 1
    return f"{base}-{n}"


def apply_threads(values):
    """Cap BLAS pools; deterministic mode defaults to a single thread."""
    global _thread_limiter
    threads = values["threads"]
    if threads is None:
        threads = 1 if values["deterministic"] else (os.cpu_count() or 1)
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    try:
        from threadpoolctl import threadpool_limits
        _thread_limiter = threadpool_limits(limits=threads)
    except ImportError:
        pass
    return threads


# ---------------------------------------------------------------------------
# flag wiring


def _add_config_flags(p):
    p.add_argument("--config", metavar="FILE", help="flat key=value config file")
    p.add_argument("--json", action="store_true",
                   help="machine-readable output on stdout")


def _add_data_flags(p):
    p.add_argument("--data", help="dataset root directory")
    p.add_argument("--input-size", dest="input_size", type=int)
    p.add_argument("--split", choices=("auto", "folders", "ratio"))
    p.add_argument("--train-ratio", dest="train_ratio", type=float)
    p.add_argument("--binarize", metavar="CLASSES",
                   help="positive class list (comma separated) or 'auto'")


def _add_run_flags(p):
    p.add_argument("--model", choices=("btbcnn", "btmcnn"))
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss", choices=("auto", "bce", "ce"))
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--out", help="run directory (numeric suffix on collision)")


def build_parser():
    parser = _Parser(prog="leancnn",
                     description="CNN training and inference engine")
    parser.add_argument("--version", action="version",
                        version=f"leancnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("scan", help="index a dataset folder")
    p.add_argument("root")
    p.add_argument("--out", help="write the manifest JSON here")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train one model")
    _add_run_flags(p)
    _add_data_flags(p)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--on", choices=("train", "test", "all"), default="test",
                   help="which side of the split to score (default test)")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   default=None)
    _add_data_flags(p)
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="learning-rate sweep")
    p.add_argument("--lrs", help="comma separated learning rates")
    _add_run_flags(p)
    _add_data_flags(p)
    _add_config_flags(p)

    p = sub.add_parser("fewshot", help="k-shot training protocol")
    p.add_argument("--shots", help="comma separated shots per class")
    p.add_argument("--sampler-seed", dest="sampler_seed", type=int)
    _add_run_flags(p)
    _add_data_flags(p)
    _add_config_flags(p)

    p = sub.add_parser("bench", help="latency microbenchmarks")
    p.add_argument("--models", default="btbcnn,btmcnn",
                   help="comma list of model kinds to measure")
    p.add_argument("--bench-batch-size", dest="bench_batch_size", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--measured", type=int)
    p.add_argument("--input-size", dest="input_size", type=int)
    p.add_argument("--train-epochs", dest="train_epochs", type=int, default=0,
                   help="also time a training run of this many epochs")
    p.add_argument("--kernels", action="store_true",
                   help="compare raw kernel backends (numpy vs numba)")
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--out", help="write bench.json/bench.md here")
    _add_config_flags(p)

    p = sub.add_parser("report", help="re-render a run directory summary")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=("json", "markdown", "csv"),
                   default="markdown")
    _add_config_flags(p)
    return parser


_FLAG_KEYS = ("model", "data", "input_size", "lr", "epochs", "batch_size",
              "seed", "loss", "eval_every", "split", "train_ratio",
              "sampler_seed", "binarize", "threads", "deterministic",
              "warmup", "measured", "bench_batch_size")


def resolve_config(args):
    flags = {}
    for key in _FLAG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            flags[key] = v
    if getattr(args, "lrs", None) is not None:
        flags["lrs"] = config_mod.parse_value("lrs", args.lrs)
    if getattr(args, "shots", None) is not None:
        flags["shots"] = config_mod.parse_value("shots", args.shots)
    return config_mod.resolve(flags=flags,
                              file_path=getattr(args, "config", None))


# ---------------------------------------------------------------------------
# dataset assembly


def _positive_classes(binarize, classes):
    if binarize == "auto":
        positives = [c for c in classes if c.lower() not in KNOWN_NEGATIVE_CLASSES]
        if len(positives) == len(classes):
            raise ConfigError(
                f"--binarize auto found no negative class among {classes}; "
                "list the positive classes explicitly")
        return positives
    return [c.strip() for c in binarize.split(",") if c.strip()]


def load_datasets(values, model_kind):
    """Scan, optionally binarize, split; returns (train_ds, test_ds, classes)."""
    root = values["data"]
    if not root:
        raise ConfigError("--data (or the data config key) is required")
    manifest = scan_dataset(root)
    labels, class_names = manifest.labels, manifest.classes
    if values["binarize"] is not None:
        labels, class_names = binarize_labels(
            labels, manifest.classes,
            _positive_classes(values["binarize"], manifest.classes))
    if model_kind == "btbcnn" and len(class_names) != 2:
        raise ConfigError(
            f"btbcnn is binary but the dataset has {len(class_names)} classes "
            f"{class_names}; pass --binarize to fold them into two")
    pp = PreprocessConfig(input_size=values["input_size"])
    base = ImageDataset(manifest, pp, labels=labels, class_names=class_names)
    train_idx, test_idx = split_manifest(
        manifest, mode=values["split"], train_ratio=values["train_ratio"],
        seed=values["seed"])
    return Subset(base, train_idx), Subset(base, test_idx), class_names


def make_spec(values, num_classes):
    kind = values["model"]
    return ModelSpec(kind=kind, in_channels=1,
                     num_classes=1 if kind == "btbcnn" else num_classes,
                     input_size=values["input_size"])


def make_train_config(values):
    return TrainConfig(lr=values["lr"], epochs=values["epochs"],
                       batch_size=values["batch_size"], seed=values["seed"],
                       loss=values["loss"], eval_every=values["eval_every"],
                       deterministic=values["deterministic"])


def write_manifest(out_dir, command, argv, values, provenance, config_file,
                   started, artifacts):
    manifest = {
        "command": command,
        "argv": list(argv),
        "engine_version": __version__,
        "kernel_backend": backend.active_name(),
        "config_file": config_file,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in values.items()},
        "provenance": provenance,
        "started": started,
        "finished": _iso_now(),
        "artifacts": sorted(artifacts),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_scan(args, argv):
    manifest = scan_dataset(args.root)
    counts = manifest.class_counts()
    if args.out:
        manifest.save(args.out)
    if args.json:
        out = {"root": manifest.root, "classes": manifest.classes,
               "counts": counts, "total": manifest.n,
               "presplit": manifest.folds is not None}
        print(json.dumps(out, indent=2))
    else:
        print(f"dataset root: {manifest.root}")
        for cls in manifest.classes:
            print(f"  {cls}: {counts[cls]} images")
        print(f"total: {manifest.n} images"
              + (" (Training/Testing folders)" if manifest.folds is not None
                 else ""))
        if args.out:
            print(f"manifest written to {args.out}")
    return 0


def _start_run(args):
    values, provenance = resolve_config(args)
    threads = apply_threads(values)
    out_dir = None
    if getattr(args, "out", None):
        out_dir = unique_run_dir(args.out)
        os.makedirs(out_dir)
    return values, provenance, threads, out_dir


def cmd_train(args, argv):
    started = _iso_now()
    values, provenance, threads, out_dir = _start_run(args)
    train_ds, test_ds, class_names = load_datasets(values, values["model"])
    spec = make_spec(values, len(class_names))
    tc = make_train_config(values)
    result = train(spec, train_ds, test_ds, tc, out_dir=out_dir)
    if out_dir:
        artifacts = [f for f in os.listdir(out_dir) if f != "manifest.json"]
        write_manifest(out_dir, "train", argv, values, provenance,
                       args.config, started, artifacts)
    if args.json:
        out = {"report": result.report.to_dict(),
               "confusion": {"classes": result.confusion.class_names,
                             "matrix": result.confusion.matrix.tolist()},
               "epochs": [{"epoch": s.epoch, "mean_loss": s.mean_loss,
                           "eval_accuracy": s.eval_accuracy}
                          for s in result.epochs],
               "wall_seconds": result.wall_seconds,
               "out_dir": out_dir}
        print(json.dumps(out, indent=2))
    else:
        print(render_report(result.report, result.confusion, "markdown"),
              end="")
        note = published_count_note(spec.kind, result.model.param_count())
        if note:
            print(f"\n{note}")
        if out_dir:
            print(f"\nrun directory: {out_dir}")
    return 0


def cmd_eval(args, argv):
    values, provenance, threads, _ = _start_run(args)
    model = load_checkpoint(args.checkpoint)
    if values["input_size"] != model.spec.input_size \
            and provenance["input_size"] == "default":
        values["input_size"] = model.spec.input_size
    root = values["data"]
    if not root:
        raise ConfigError("--data (or the data config key) is required")
    manifest = scan_dataset(root)
    labels, class_names = manifest.labels, manifest.classes
    if values["binarize"] is not None:
        labels, class_names = binarize_labels(
            labels, manifest.classes,
            _positive_classes(values["binarize"], manifest.classes))
    if model.spec.num_classes == 1 and len(class_names) != 2:
        raise ConfigError(
            f"binary checkpoint scored on {len(class_names)}-class data; "
            "pass --binarize")
    if model.spec.num_classes > 1 and len(class_names) != model.spec.num_classes:
        raise DataError(
            f"checkpoint has {model.spec.num_classes} outputs but the dataset "
            f"has {len(class_names)} classes")
    pp = PreprocessConfig(input_size=values["input_size"])
    base = ImageDataset(manifest, pp, labels=labels, class_names=class_names)
    if args.on == "all":
        ds = base
    else:
        train_idx, test_idx = split_manifest(
            manifest, mode=values["split"], train_ratio=values["train_ratio"],
            seed=values["seed"])
        ds = Subset(base, train_idx if args.on == "train" else test_idx)
    report, cm = evaluate(model, ds, values["batch_size"])
    if args.json:
        print(render_report(report, cm, "json"), end="")
    else:
        print(render_report(report, cm, "markdown"), end="")
    return 0


def cmd_sweep(args, argv):
    started = _iso_now()
    values, provenance, threads, out_dir = _start_run(args)
    train_ds, test_ds, class_names = load_datasets(values, values["model"])
    spec = make_spec(values, len(class_names))
    tc = make_train_config(values)
    sweep = lr_sweep(spec, train_ds, test_ds, values["lrs"], tc,
                     out_dir=out_dir)
    if out_dir:
        artifacts = [f for f in os.listdir(out_dir) if f != "manifest.json"]
        write_manifest(out_dir, "sweep", argv, values, provenance,
                       args.config, started, artifacts)
    if args.json:
        out = sweep.to_dict()
        out["out_dir"] = out_dir
        print(json.dumps(out, indent=2))
    else:
        print("| lr | status | accuracy | precision | recall | f1 |")
        print("| --- | --- | --- | --- | --- | --- |")
        for e in sweep.entries:
            if e.status == "ok":
                print(f"| {e.lr:g} | ok | {100 * e.accuracy:.2f}% "
                      f"| {100 * e.precision:.2f}% | {100 * e.recall:.2f}% "
                      f"| {100 * e.f1:.2f}% |")
            else:
                print(f"| {e.lr:g} | diverged (epoch {e.diverged_at_epoch}) "
                      f"| | | | |")
        print(f"\nbest lr: {sweep.best_lr:g}")
        if out_dir:
            print(f"run directory: {out_dir}")
    return 0


def cmd_fewshot(args, argv):
    started = _iso_now()
    values, provenance, threads, out_dir = _start_run(args)
    train_ds, test_ds, class_names = load_datasets(values, values["model"])
    spec = make_spec(values, len(class_names))
    tc = make_train_config(values)
    result = few_shot_experiment(spec, train_ds, test_ds, values["shots"], tc,
                                 sampler_seed=values["sampler_seed"],
                                 out_dir=out_dir)
    if out_dir:
        artifacts = [f for f in os.listdir(out_dir) if f != "manifest.json"]
        write_manifest(out_dir, "fewshot", argv, values, provenance,
                       args.config, started, artifacts)
    if args.json:
        out = result.to_dict()
        out["out_dir"] = out_dir
        print(json.dumps(out, indent=2))
    else:
        print("| shots/class | train size | accuracy |")
        print("| --- | --- | --- |")
        for e in result.entries:
            print(f"| {e.shots} | {e.n_train} | {100 * e.accuracy:.2f}% |")
        if out_dir:
            print(f"\nrun directory: {out_dir}")
    return 0


def cmd_bench(args, argv):
    started = _iso_now()
    values, provenance, threads, out_dir = _start_run(args)
    bc = BenchConfig(batch_size=values["bench_batch_size"],
                     warmup=values["warmup"], measured=values["measured"],
                     threads=threads, input_size=values["input_size"])
    kinds = [k.strip() for k in args.models.split(",") if k.strip()]
    for k in kinds:
        if k not in ("btbcnn", "btmcnn"):
            raise ConfigError(f"unknown model kind {k!r} in --models")
    entries = []
    for kind in kinds:
        spec = ModelSpec(kind=kind, input_size=values["input_size"])
        entries.append(time_inference(build(spec, values["seed"]), bc,
                                      seed=values["seed"]))
    report = BenchReport(entries=entries, literature=literature_entries(),
                         config=bc)
    payload = report.to_dict()
    if args.train_epochs > 0:
        tb = time_training(ModelSpec(kind=kinds[0],
                                     input_size=values["input_size"]),
                           args.train_epochs, bc, seed=values["seed"])
        payload["training"] = tb.to_dict()
    if args.kernels:
        payload["kernel_backends"] = compare_kernel_backends()
    if out_dir:
        with open(os.path.join(out_dir, "bench.json"), "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
        with open(os.path.join(out_dir, "bench.md"), "w") as f:
            f.write(report.to_markdown())
        write_manifest(out_dir, "bench", argv, values, provenance,
                       args.config, started, ["bench.json", "bench.md"])
    if args.json:
        payload["out_dir"] = out_dir
        print(json.dumps(payload, indent=2))
    else:
        print(report.to_markdown(), end="")
        if args.kernels:
            print("\n| kernel | backend | median ms | max abs diff vs numpy |")
            print("| --- | --- | --- | --- |")
            for row in payload["kernel_backends"]:
                print(f"| {row['kernel']} | {row['backend']} "
                      f"| {row['median_ms']:.3f} "
                      f"| {row['max_abs_diff_vs_numpy']:g} |")
        if args.train_epochs > 0:
            tbd = payload["training"]
            print(f"\ntraining: {tbd['epochs']} epochs over {tbd['n_train']} "
                  f"images in {tbd['seconds']:.2f}s")
        if out_dir:
            print(f"\nrun directory: {out_dir}")
    return 0


def cmd_report(args, argv):
    run_dir = args.run_dir
    if not os.path.isdir(run_dir):
        raise DataError(f"path not found: {run_dir}")
    rendered = []
    report_path = os.path.join(run_dir, "report.json")
    if os.path.exists(report_path):
        try:
            with open(report_path) as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"unreadable report.json in {run_dir}: {e}") from e
        rep, cm = report_from_dict(d)
        rendered.append(render_report(rep, cm, args.format))
    sweep_path = os.path.join(run_dir, "sweep.json")
    if os.path.exists(sweep_path):
        with open(sweep_path) as f:
            d = json.load(f)
        lines = ["| lr | status | accuracy |", "| --- | --- | --- |"]
        for e in d["entries"]:
            if e["status"] == "ok":
                lines.append(f"| {e['lr']:g} | ok | {100 * e['accuracy']:.2f}% |")
            else:
                lines.append(f"| {e['lr']:g} | diverged | |")
        lines.append(f"\nbest lr: {d['best_lr']:g}")
        rendered.append("\n".join(lines) + "\n"
                        if args.format != "json"
                        else json.dumps(d, indent=2) + "\n")
    fewshot_path = os.path.join(run_dir, "fewshot.json")
    if os.path.exists(fewshot_path):
        with open(fewshot_path) as f:
            d = json.load(f)
        if args.format == "json":
            rendered.append(json.dumps(d, indent=2) + "\n")
        else:
            lines = ["| shots/class | train size | accuracy |",
                     "| --- | --- | --- |"]
            for e in d["entries"]:
                lines.append(f"| {e['shots']} | {e['n_train']} "
                             f"| {100 * e['accuracy']:.2f}% |")
            rendered.append("\n".join(lines) + "\n")
    if not rendered:
        raise DataError(
            f"{run_dir} holds no report.json, sweep.json, or fewshot.json")
    sys.stdout.write("".join(rendered))
    return 0


COMMANDS = {"scan": cmd_scan, "train": cmd_train, "eval": cmd_eval,
            "sweep": cmd_sweep, "fewshot": cmd_fewshot, "bench": cmd_bench,
            "report": cmd_report}


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args, argv)
    except DivergenceError as e:
        print(f"divergence error: {_single_line(e)}", file=sys.stderr)
        return 3
    except (DataError, FormatError) as e:
        print(f"data error: {_single_line(e)}", file=sys.stderr)
        return 2
    except (ConfigError, ValidationError, ShapeError) as e:
        print(f"usage error: {_single_line(e)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
