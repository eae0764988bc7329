"""Experiment runner: one config in, one report (and table row) out.

Config files are JSON.  A single experiment looks like::

    {
      "name": "mnist-9000-mcnn",
      "table": "Table 3",
      "dataset": {"kind": "mnist", "root": "${OVACNN_MNIST_DIR}"},
      "split": {"train_size": 9000, "val_size": 3000, "test_size": 3000, "seed": 1},
      "model": "mcnn",
      "train": {"learn_rate": 0.01, "max_epochs": 30, "seed": 1},
      "jobs": 4
    }

A suite file holds ``{"defaults": {...}, "experiments": [{...}, ...]}``;
each experiment is merged over the defaults (nested dicts merge key-wise).
String values undergo ``${VAR}`` expansion, and relative dataset paths
resolve against the suite file's directory.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import data as D
from .ensemble import config_digest, evaluate_ensemble, train_ensemble
from .errors import ConfigError, OvaCnnError
from .network import Network, architecture
from .training import TrainConfig, evaluate, run_streams, train

log = logging.getLogger(__name__)

MODELS = {
    "mcnn": ("MCNN", "mcnn"),
    "bccnn_ensemble": ("BCCNN Ensemble", "bccnn"),
    "bccnn_modified_ensemble": ("Modified BCCNN Ensemble", "bccnn_modified"),
}
DATASET_KINDS = ("mnist", "idx", "csv", "imagedir")
_PATH_KEYS = ("root", "images", "labels", "csv")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    root: str | None = None
    images: str | None = None
    labels: str | None = None
    csv: str | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        need = {"mnist": ("root",), "idx": ("images", "labels"), "csv": ("csv",), "imagedir": ("root",)}
        missing = [k for k in need[self.kind] if not getattr(self, k)]
        if missing:
            raise ConfigError(f"dataset kind {self.kind!r} needs {missing}")

    def load(self):
        if self.kind == "mnist":
            return D.load_mnist(self.root)
        if self.kind == "idx":
            return D.load_idx(self.images, self.labels)
        if self.kind == "csv":
            return D.load_csv(self.csv)
        return D.load_image_dir(self.root)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    split: D.SplitSpec
    model: str
    train: TrainConfig
    name: str = ""
    table: str = ""
    jobs: int | None = None
    out: str | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {sorted(MODELS)}, got {self.model!r}")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            return cls(
                dataset=DatasetSpec(**d.pop("dataset")),
                split=D.SplitSpec(**d.pop("split")),
                model=d.pop("model"),
                train=TrainConfig.from_dict(d.pop("train", {})),
                **d,
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from None

    def to_dict(self):
        return {
            "name": self.name,
            "table": self.table,
            "dataset": self.dataset.to_dict(),
            "split": asdict(self.split),
            "model": self.model,
            "train": self.train.to_dict(),
            "jobs": self.jobs,
            "out": self.out,
        }

    def semantic_dict(self):
        """Fields that can change results; labels, paths out and worker count excluded."""
        d = self.to_dict()
        for k in ("name", "table", "jobs", "out"):
            d.pop(k)
        return d

    def digest(self):
        return config_digest(self.semantic_dict())


@dataclass
class ExperimentReport:
    name: str
    table: str
    network: str
    learn_rate: float
    train_size: int
    val_size: int
    test_size: int
    epochs: int | None = None
    accuracy: float | None = None
    accuracy_pct: float | None = None
    wall_seconds: float | None = None
    member_epochs: list = field(default_factory=list)
    member_seconds: list = field(default_factory=list)
    stop_reasons: list = field(default_factory=list)
    best_iterations: list = field(default_factory=list)
    iterations_run: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    digest: str = ""
    environment: dict = field(default_factory=dict)
    failure: str | None = None

    @property
    def ok(self):
        return self.failure is None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def environment_note():
    return {"cpu_count": os.cpu_count()}


def _blank_report(cfg):
    return ExperimentReport(
        name=cfg.name,
        table=cfg.table,
        network=MODELS[cfg.model][0],
        learn_rate=cfg.train.sgdm.learn_rate,
        train_size=cfg.split.train_size,
        val_size=cfg.split.val_size,
        test_size=cfg.split.test_size,
        config=cfg.to_dict(),
        digest=cfg.digest(),
        environment=environment_note(),
    )


def train_model(cfg, train_set, val_set):
    """Train the configured model; returns ``(model, outcomes, member_seconds)``."""
    arch = MODELS[cfg.model][1]
    if cfg.model == "mcnn":
        init_seq, shuffle_seq = run_streams(cfg.train.seed)
        net = Network.from_spec(architecture(arch), seed=init_seq)
        start = time.perf_counter()
        net, outcome = train(net, train_set, val_set, cfg.train, shuffle_seed=shuffle_seq)
        return net, [outcome], [time.perf_counter() - start]
    return train_ensemble(train_set, val_set, arch, cfg.train, cfg.jobs)


def evaluate_model(model, dataset):
    """Test accuracy of a trained network or ensemble."""
    if isinstance(model, Network):
        return evaluate(model, dataset)[0]
    return evaluate_ensemble(model, dataset)[0]


def run_experiment(cfg, dataset=None, keep_model=False):
    """Load, split, train and test one configuration.

    Writes ``report.json``, ``table.md``, ``table.csv`` and the trained model
    to ``cfg.out`` (when set) only after every step succeeded.  With
    ``keep_model`` the trained model and per-run outcomes are returned too.
    """
    report = _blank_report(cfg)
    if dataset is None:
        dataset = cfg.dataset.load()
    train_set, val_set, test_set = D.split(dataset, cfg.split)
    start = time.perf_counter()
    model, outcomes, seconds = train_model(cfg, train_set, val_set)
    report.accuracy = evaluate_model(model, test_set)
    report.wall_seconds = time.perf_counter() - start
    report.accuracy_pct = round(report.accuracy * 100.0, 4)
    report.member_epochs = [o.epochs_run for o in outcomes]
    report.epochs = max(report.member_epochs)
    report.member_seconds = list(seconds)
    report.stop_reasons = [o.stop_reason for o in outcomes]
    report.best_iterations = [o.best_iteration for o in outcomes]
    report.iterations_run = [o.iterations_run for o in outcomes]
    if cfg.out:
        write_outputs(Path(cfg.out), [report], model=model, outcomes=outcomes)
    if keep_model:
        return report, model, outcomes
    return report


def write_outputs(out_dir, reports, model=None, outcomes=None):
    """Atomically (per directory) write the report files and optional model."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir.parent))
    try:
        payload = [r.to_dict() for r in reports]
        (staging / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
        if reports:
            md, csv_text = emit_table(reports)
            (staging / "table.md").write_text(md)
            (staging / "table.csv").write_text(csv_text)
        if model is not None:
            if isinstance(model, Network):
                model.save(staging / "model.ovanet")
            else:
                model.save(staging / "ensemble")
        for i, o in enumerate(outcomes or []):
            stem = "loss_curve" if isinstance(model, Network) else f"member_{i}_loss_curve"
            o.write_loss_curve(staging / f"{stem}.csv")
        out_dir.mkdir(parents=True, exist_ok=True)
        for item in staging.iterdir():
            target = out_dir / item.name
            if target.is_dir():
                shutil.rmtree(target)
            os.replace(item, target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------

CSV_COLUMNS = [
    "table", "network", "learning_rate", "train_size", "val_size", "test_size",
    "epochs", "accuracy_pct", "failure",
]


def _ns(r):
    return str(r.val_size) if r.val_size == r.test_size else f"{r.val_size} / {r.test_size}"


def _markdown(reports):
    lr_col = len({r.learn_rate for r in reports}) > 1
    header = ["Network"]
    if lr_col:
        header.append("Learning Rate")
    header += [
        "Training Set Size (NR)",
        "Validation Set Size / Testing Set Size (NS)",
        "Training Epochs",
        "Accuracy (%)",
    ]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in reports:
        row = [r.network]
        if lr_col:
            row.append(f"{r.learn_rate:g}")
        if r.ok:
            row += [str(r.train_size), _ns(r), str(r.epochs), f"{r.accuracy_pct:.4f}"]
        else:
            row += [str(r.train_size), _ns(r), "-", f"FAILED: {r.failure}"]
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def emit_table(reports):
    """Markdown (one section per table label) and its CSV twin."""
    reports = list(reports)
    if not reports:
        raise ValueError("emit_table needs at least one report")
    groups = {}
    for r in reports:
        groups.setdefault(r.table, []).append(r)
    sections = []
    for table, rows in groups.items():
        body = _markdown(rows)
        sections.append(f"### {table}\n\n{body}" if table else body)
    md = "\n".join(sections)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([
            r.table, r.network, repr(r.learn_rate), r.train_size, r.val_size, r.test_size,
            "" if r.epochs is None else r.epochs,
            "" if r.accuracy_pct is None else f"{r.accuracy_pct:.4f}",
            r.failure or "",
        ])
    return md, buf.getvalue()


def parse_table_csv(text):
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append({
            "table": row["table"],
            "network": row["network"],
            "learning_rate": float(row["learning_rate"]),
            "train_size": int(row["train_size"]),
            "val_size": int(row["val_size"]),
            "test_size": int(row["test_size"]),
            "epochs": int(row["epochs"]) if row["epochs"] else None,
            "accuracy_pct": float(row["accuracy_pct"]) if row["accuracy_pct"] else None,
            "failure": row["failure"] or None,
        })
    return rows


def print_or_write_table(reports, path=""):
    """Print the markdown table when ``path`` is empty, else write ``.md``/``.csv``."""
    md, csv_text = emit_table(reports)
    if not path:
        print(md, end="")
        return
    path = Path(path)
    path.with_suffix(".md").write_text(md)
    path.with_suffix(".csv").write_text(csv_text)


# --------------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------------


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _expand(obj):
    if isinstance(obj, dict):
        return {k: _expand(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_expand(v) for v in obj]
    if isinstance(obj, str):
        return os.path.expandvars(obj)
    return obj


def load_suite(suite_path):
    """Parse a suite file into ``[(raw_dict, ExperimentConfig | ConfigError)]``."""
    suite_path = Path(suite_path)
    try:
        doc = json.loads(suite_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{suite_path}: invalid JSON: {exc}") from None
    defaults = doc.get("defaults", {})
    entries = []
    for raw in doc.get("experiments", []):
        merged = _expand(_merge(defaults, raw))
        ds = merged.get("dataset", {})
        for key in _PATH_KEYS:
            if ds.get(key) and not os.path.isabs(ds[key]) and "$" not in ds[key]:
                ds[key] = str(suite_path.parent / ds[key])
        try:
            entries.append((merged, ExperimentConfig.from_dict(merged)))
        except OvaCnnError as exc:
            entries.append((merged, exc))
    return entries


def run_suite(suite_path, out_dir=None):
    """Run every experiment in order, recording failures instead of stopping."""
    reports = []
    cache = {}
    for raw, cfg in load_suite(suite_path):
        if isinstance(cfg, Exception):
            split = raw.get("split", {})
            reports.append(ExperimentReport(
                name=raw.get("name", ""), table=raw.get("table", ""),
                network=MODELS.get(raw.get("model"), (str(raw.get("model")),))[0],
                learn_rate=raw.get("train", {}).get("learn_rate", 0.01),
                train_size=split.get("train_size", 0), val_size=split.get("val_size", 0),
                test_size=split.get("test_size", 0), config=raw, failure=str(cfg),
                environment=environment_note(),
            ))
            continue
        cfg_no_out = ExperimentConfig(**{**cfg.__dict__, "out": None})
        try:
            key = cfg.dataset
            if key not in cache:
                cache.clear()
                cache[key] = cfg.dataset.load()
            report = run_experiment(cfg_no_out, dataset=cache[key])
        except (OvaCnnError, OSError) as exc:
            log.error("experiment %r failed: %s", cfg.name, exc)
            report = _blank_report(cfg)
            report.failure = f"{type(exc).__name__}: {exc}"
        reports.append(report)
    if out_dir:
        write_outputs(Path(out_dir), reports)
    return reports
