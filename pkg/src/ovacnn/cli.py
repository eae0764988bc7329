"""Command line entry point: ``ovacnn <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from . import data as D
from . import gradcheck
from .errors import ConfigError, OvaCnnError
from .ensemble import OvaEnsemble
from .harness import (
    DATASET_KINDS, MODELS, DatasetSpec, ExperimentConfig, environment_note, evaluate_model,
    print_or_write_table, run_experiment, run_suite,
)
from .network import Network

log = logging.getLogger("ovacnn")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _dataset_args(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", choices=DATASET_KINDS, help="default: mnist")
    g.add_argument("--root", help="directory for mnist IDX files or class-named image folders")
    g.add_argument("--images", help="IDX image file")
    g.add_argument("--labels", help="IDX label file")
    g.add_argument("--csv", help="CSV file, label first")


def _split_args(p, required):
    g = p.add_argument_group("split")
    for name in ("--train-size", "--val-size", "--test-size"):
        g.add_argument(name, type=int, required=required)
    g.add_argument("--seed", type=int, help="split, init and shuffle seed (default 0)")


def build_parser():
    parser = argparse.ArgumentParser(prog="ovacnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and test one model")
    p.add_argument("--config", help="JSON experiment config; flags override it")
    _dataset_args(p)
    _split_args(p, required=False)
    p.add_argument("--model", choices=sorted(MODELS), default=None)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--jobs", type=int, help="ensemble members trained concurrently")
    p.add_argument("--out", help="output directory for report, tables, model and loss curves")

    p = sub.add_parser("suite", help="run a suite file of experiments")
    p.add_argument("suite", nargs="?", default=None,
                   help="suite file (default: the bundled tables_1_to_6.suite)")
    p.add_argument("--out", help="output directory; table printed to stdout when omitted")

    p = sub.add_parser("eval", help="evaluate a saved model or ensemble directory")
    p.add_argument("model_path")
    _dataset_args(p)
    _split_args(p, required=False)
    p.add_argument("--out", help="write report.json there")

    p = sub.add_parser("convert-usps", help="convert USPS .mat/.h5 to CSV")
    p.add_argument("source")
    p.add_argument("dest")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", type=int, nargs="+", default=[8, 28])
    p.add_argument("--out", help="write results as JSON")
    return parser


def bundled_suite():
    return resources.files("ovacnn") / "suites" / "tables_1_to_6.suite"


_DATASET_FLAGS = ("dataset", "root", "images", "labels", "csv")


def _dataset_from(args):
    kind = args.dataset or "mnist"
    fields = {k: getattr(args, k) for k in _DATASET_FLAGS[1:] if getattr(args, k)}
    if kind == "mnist" and "root" not in fields and os.environ.get("OVACNN_MNIST_DIR"):
        fields["root"] = os.environ["OVACNN_MNIST_DIR"]
    return DatasetSpec(kind, **fields)


def _train_config_from(args):
    if args.config:
        base = json.loads(Path(args.config).read_text())
    else:
        base = {}
    if "dataset" not in base or any(getattr(args, k) for k in _DATASET_FLAGS):
        base["dataset"] = _dataset_from(args).to_dict()
    split = base.setdefault("split", {})
    for key in ("train_size", "val_size", "test_size"):
        if getattr(args, key) is not None:
            split[key] = getattr(args, key)
    train = base.setdefault("train", {})
    if args.seed is not None:
        split["seed"] = args.seed
        train["seed"] = args.seed
    for flag, key in (("lr", "learn_rate"), ("batch", "batch_size"), ("max_epochs", "max_epochs")):
        if getattr(args, flag) is not None:
            train[key] = getattr(args, flag)
    if args.model:
        base["model"] = args.model
    base.setdefault("model", "mcnn")
    split.setdefault("seed", 0)
    train.setdefault("seed", split["seed"])
    for key in ("jobs", "out"):
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    if not all(k in split for k in ("train_size", "val_size", "test_size")):
        raise ConfigError("--train-size, --val-size and --test-size are required")
    base.setdefault("name", f"{base['model']}-{split['train_size']}")
    return ExperimentConfig.from_dict(base)


def cmd_train(args):
    cfg = _train_config_from(args)
    report = run_experiment(cfg)
    print_or_write_table([report])
    log.info("accuracy %.4f%% in %.1fs", report.accuracy_pct, report.wall_seconds)
    return EXIT_OK


def cmd_suite(args):
    path = args.suite or bundled_suite()
    reports = run_suite(path, out_dir=args.out)
    if reports and not args.out:
        print_or_write_table(reports)
    failed = [r for r in reports if not r.ok]
    for r in failed:
        print(f"FAILED {r.name}: {r.failure}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_eval(args):
    spec = _dataset_from(args)
    dataset = spec.load()
    sizes = (args.train_size, args.val_size, args.test_size)
    if all(s is not None for s in sizes):
        dataset = D.split(dataset, D.SplitSpec(*sizes, seed=args.seed or 0))[2]
    elif any(s is not None for s in sizes):
        raise ConfigError("give all of --train-size, --val-size and --test-size, or none")
    path = Path(args.model_path)
    model = OvaEnsemble.load(path) if path.is_dir() else Network.load(path)
    accuracy = evaluate_model(model, dataset)
    result = {
        "model_path": str(path),
        "dataset": spec.to_dict(),
        "n_samples": len(dataset),
        "accuracy": accuracy,
        "accuracy_pct": round(accuracy * 100.0, 4),
        "environment": environment_note(),
    }
    print(json.dumps(result, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(result, indent=2) + "\n")
    return EXIT_OK


def cmd_convert_usps(args):
    n = D.convert_usps(args.source, args.dest)
    print(f"wrote {n} samples to {args.dest}")
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck.run_all(seed=args.seed, sizes=tuple(args.sizes))
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max rel error {r.max_rel_error:.3e} (tol {r.tolerance:g})")
    if args.out:
        Path(args.out).write_text(json.dumps(
            [{"name": r.name, "max_rel_error": r.max_rel_error, "tolerance": r.tolerance,
              "passed": r.passed} for r in results], indent=2) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


COMMANDS = {
    "train": cmd_train,
    "suite": cmd_suite,
    "eval": cmd_eval,
    "convert-usps": cmd_convert_usps,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OvaCnnError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
