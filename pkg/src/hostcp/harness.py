"""Experiment orchestration: addition/removal curves, mislabel inspection, NDCG, timing.

Every experiment is a pure function of its config. Wall-clock measurements are
kept out of ``report.json`` and written to ``timings.json`` instead, so that
re-running an experiment reproduces the report byte for byte.
"""

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import flip_labels, gen_synthetic, load_csv, restore_labels, round_half_up, save_csv, split_indices
from .estimator import SGDNetClassifier
from .exceptions import ConfigError
from .tensor import batch_losses
from .trainer import TrainerConfig, extract_selection, reverse_selection, run, value

__all__ = [
    "DatasetSource",
    "ExperimentConfig",
    "Report",
    "ndcg_at_k",
    "run_experiment",
    "run_addition_curve",
    "run_removal_curve",
    "run_mislabel",
    "run_ndcg",
    "run_timing",
    "run_train",
    "emit_report",
    "load_config",
]

KINDS = ("addition", "removal", "mislabel", "ndcg", "timing", "train", "gen-data")
BASELINE_OFFSET = 10 ** 6
FLIP_OFFSET = 2 * 10 ** 6
RETRAIN_EPOCHS = 50
RETRAIN_LR = 0.1
RETRAIN_BATCH = 32
NULL_SHUFFLES = 1000
TIMING_BATCH = 20
TIMING_TEST = 200

DEFAULT_FRACTIONS = {
    "addition": [0.05, 0.1, 0.2, 0.3, 0.5, 1.0],
    "removal": [0.05, 0.1, 0.2, 0.3, 0.5],
    "mislabel": [0.1, 0.2, 0.3, 0.4, 0.5, 1.0],
    "ndcg": [0.05, 0.1, 0.15, 0.25, 0.4],
}


@dataclass
class DatasetSource:
    """Synthetic parameters, or a CSV path when ``path`` is set.

    A synthetic ``seed`` of ``None`` regenerates the data from each run seed.
    """

    n: int = 1000
    d: int = 10
    seed: int = None
    path: str = None
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.path is None and (self.n < 2 or self.d < 1):
            raise ConfigError("synthetic data needs n >= 2 and d >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")

    def load(self, seed):
        if self.path is not None:
            return load_csv(self.path)
        return gen_synthetic(self.n, self.d, seed if self.seed is None else self.seed)

    def split(self, seed):
        ds = self.load(seed)
        train_rows, test_rows = split_indices(ds.n, self.test_fraction, seed)
        return ds.subset(train_rows), ds.subset(test_rows)


def _reject_unknown(cls, data, what):
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    experiment: str
    dataset: DatasetSource = field(default_factory=DatasetSource)
    fractions: list = None
    flip_fraction: float = 0.1
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    out_dir: str = None
    sizes: list = field(default_factory=lambda: [500, 1000, 2000, 4000])

    def __post_init__(self):
        if self.experiment not in KINDS:
            raise ConfigError(f"experiment must be one of {', '.join(KINDS)}, got {self.experiment!r}")
        if self.fractions is None:
            self.fractions = list(DEFAULT_FRACTIONS.get(self.experiment, []))
        self.fractions = [float(f) for f in self.fractions]
        if any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ConfigError("fractions must lie in (0, 1]")
        if self.fractions != sorted(self.fractions):
            raise ConfigError("fractions must be sorted ascending")
        if self.experiment == "removal" and self.fractions and self.fractions[-1] >= 1.0:
            raise ConfigError("removing the whole training set leaves nothing to train on")
        if not 0.0 < self.flip_fraction <= 1.0:
            raise ConfigError("flip_fraction must lie in (0, 1]")
        if not self.seeds or any(int(s) != s or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of nonnegative integers")
        self.seeds = [int(s) for s in self.seeds]
        if not self.sizes or any(int(n) < 2 for n in self.sizes):
            raise ConfigError("sizes must be integers >= 2")
        self.sizes = [int(n) for n in self.sizes]

    @classmethod
    def from_dict(cls, data):
        _reject_unknown(cls, data, "experiment config")
        data = dict(data)
        if "experiment" not in data:
            raise ConfigError("missing key 'experiment'")
        if "dataset" in data:
            _reject_unknown(DatasetSource, data["dataset"], "dataset")
            data["dataset"] = DatasetSource(**data["dataset"])
        if "trainer" in data:
            data["trainer"] = TrainerConfig.from_dict(data["trainer"])
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        out = asdict(self)
        out.pop("out_dir")
        return out

    def trainer_for(self, seed, gamma=None):
        cfg = self.trainer.to_dict()
        cfg["seed"] = seed
        if gamma is not None:
            cfg["gamma"] = gamma
        return TrainerConfig(**cfg)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    return ExperimentConfig.from_dict(data)


@dataclass
class Report:
    experiment: str
    config: dict
    x_name: str
    metric: str
    rows: list
    aggregate: list
    summary: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _aggregate(rows, metric, x_name="fraction"):
    out = []
    for x in sorted({r[x_name] for r in rows}):
        cell = [r for r in rows if r[x_name] == x]
        entry = {x_name: x}
        for key in (metric, "baseline_" + metric):
            vals = [r[key] for r in cell if r.get(key) is not None]
            if vals:
                name = "mean" if key == metric else "baseline_mean"
                entry[name] = float(np.mean(vals))
                entry[name.replace("mean", "stddev")] = float(np.std(vals))
        out.append(entry)
    return out


def _report(config, rows, metric, x_name="fraction", summary=None):
    return Report(config.experiment, config.to_dict(), x_name, metric, rows,
                  _aggregate(rows, metric, x_name), summary or {})


def retrain(train, test, rows, seed, arch):
    """Fresh predictor on ``rows`` of ``train``; returns test ``(accuracy, loss)``."""
    rows = np.sort(np.asarray(rows, dtype=np.int64))
    clf = SGDNetClassifier(hidden=tuple(arch), lr=RETRAIN_LR, epochs=RETRAIN_EPOCHS,
                           batch_size=RETRAIN_BATCH, seed=seed)
    clf.fit(train.features[rows], train.labels[rows])
    acc = float(np.mean(clf.predict(test.features) == test.labels))
    if not np.all(np.isin(test.labels, clf.classes_)):
        # a class missing from the subset has no logit to score
        return acc, float("nan")
    losses, _ = batch_losses(clf.decision_function(test.features), np.searchsorted(clf.classes_, test.labels))
    return acc, float(np.mean(losses))


def _subset_curve(config, remove):
    rows = []
    for seed in config.seeds:
        train, test = config.dataset.split(seed)
        arch = config.trainer.predictor_arch
        rng = np.random.default_rng(seed + BASELINE_OFFSET)
        base_perm = rng.permutation(train.n)
        for frac in config.fractions:
            log = run(train, test, config.trainer_for(seed, gamma=frac))
            chosen = extract_selection(log, frac)
            baseline = base_perm[:len(chosen)]
            if remove:
                chosen = np.setdiff1d(np.arange(train.n), chosen)
                baseline = np.setdiff1d(np.arange(train.n), baseline)
            acc, loss = retrain(train, test, chosen, seed, arch)
            b_acc, b_loss = retrain(train, test, baseline, seed, arch)
            rows.append({"fraction": frac, "seed": seed, "train_size": int(len(chosen)),
                         "accuracy": acc, "loss": loss,
                         "baseline_accuracy": b_acc, "baseline_loss": b_loss})
    return rows


def run_addition_curve(config):
    """Retrain on the top ``fraction`` of HOST-CP rows and on a random subset of equal size."""
    return _report(config, _subset_curve(config, remove=False), "accuracy")


def run_removal_curve(config):
    """Retrain on the complement of the top ``fraction`` and of a random subset of equal size."""
    return _report(config, _subset_curve(config, remove=True), "accuracy")


def _flipped_run(config, seed):
    train, test = config.dataset.split(seed)
    noisy, mask = flip_labels(train, config.flip_fraction, seed + FLIP_OFFSET)
    if mask.count == 0:
        raise ConfigError("flip_fraction flips no rows at this dataset size")
    log = run(noisy, test, config.trainer_for(seed))
    return train, test, noisy, mask, log


def run_mislabel(config):
    """Inspect the least valuable rows for flipped labels, fix the ones found, retrain."""
    rows = []
    for seed in config.seeds:
        _, test, noisy, mask, log = _flipped_run(config, seed)
        arch = config.trainer.predictor_arch
        base_perm = np.random.default_rng(seed + BASELINE_OFFSET).permutation(noisy.n)
        for frac in config.fractions:
            inspected = reverse_selection(log, frac)
            baseline = base_perm[:len(inspected)]
            found = np.intersect1d(inspected, mask.indices)
            b_found = np.intersect1d(baseline, mask.indices)
            acc, loss = retrain(restore_labels(noisy, mask, found), test, np.arange(noisy.n), seed, arch)
            b_acc, b_loss = retrain(restore_labels(noisy, mask, b_found), test, np.arange(noisy.n), seed, arch)
            rows.append({"fraction": frac, "seed": seed, "inspected": int(len(inspected)),
                         "fixed_fraction": len(found) / mask.count,
                         "baseline_fixed_fraction": len(b_found) / mask.count,
                         "accuracy": acc, "loss": loss,
                         "baseline_accuracy": b_acc, "baseline_loss": b_loss})
    return _report(config, rows, "fixed_fraction")


def ndcg_at_k(scores, relevance, k):
    """NDCG@k with binary gains; ids are ranked by descending score, ties by index."""
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance)
    if scores.shape != relevance.shape or scores.ndim != 1:
        raise ValueError("scores and relevance must be 1-D arrays of equal length")
    if not np.all(np.isin(relevance, (0, 1))):
        raise ValueError("relevance must be 0 or 1")
    if not 1 <= k <= len(scores):
        raise ValueError(f"need 1 <= k <= {len(scores)}, got {k}")
    n_rel = int(relevance.sum())
    if n_rel == 0:
        raise ValueError("ndcg is undefined without relevant ids")
    order = np.lexsort((np.arange(len(scores)), -scores))[:k]
    discount = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(relevance[order] @ discount)
    ideal = float(discount[:min(k, n_rel)].sum())
    return dcg / ideal


def _null_ndcg(relevance, k, rng, shuffles=NULL_SHUFFLES):
    n = len(relevance)
    vals = [ndcg_at_k(rng.permutation(n).astype(np.float64), relevance, k) for _ in range(shuffles)]
    return float(np.mean(vals))


def run_ndcg(config):
    """Rank training rows low value first and score how early the flipped ones appear."""
    rows = []
    for seed in config.seeds:
        _, _, noisy, mask, log = _flipped_run(config, seed)
        mass = np.zeros(noisy.n)
        for r in log.final_epoch_records():
            mass[np.asarray(r.ids)] = r.column_mass
        relevance = mask.flipped.astype(np.int64)
        for frac in config.fractions:
            k = max(1, round_half_up(frac * noisy.n))
            rng = np.random.default_rng(seed + BASELINE_OFFSET)
            rows.append({"fraction": frac, "seed": seed, "k": k,
                         "ndcg": ndcg_at_k(-mass, relevance, k),
                         "baseline_ndcg": _null_ndcg(relevance, k, rng)})
    return _report(config, rows, "ndcg", summary={"flip_fraction": config.flip_fraction})


def run_timing(config):
    """One epoch per training size with a fixed minibatch size; fits time against size.

    Solver call counts go into the report; wall seconds are returned
    separately as ``(report, timings)``.
    """
    rows, timings = [], []
    for seed in config.seeds:
        test = gen_synthetic(TIMING_TEST, config.dataset.d, seed + BASELINE_OFFSET)
        for n in config.sizes:
            train = gen_synthetic(n, config.dataset.d, seed)
            k = max(1, n // TIMING_BATCH)
            cfg = config.trainer_for(seed)
            cfg = TrainerConfig(**{**cfg.to_dict(), "epochs": 1, "k": k})
            start = time.perf_counter()
            log = run(train, test, cfg)
            wall = time.perf_counter() - start
            rows.append({"size": n, "seed": seed, "solver_calls": len(log.records)})
            timings.append({"size": n, "seed": seed, "wall_seconds": wall,
                            "step_seconds": [r.wall_time for r in log.records]})
    sizes = np.array([t["size"] for t in timings], dtype=np.float64)
    secs = np.array([t["wall_seconds"] for t in timings])
    timing_summary = {"r2": _r_squared(sizes, secs), "rows": timings,
                      "aggregate": _aggregate(
                          [{"size": t["size"], "wall_seconds": t["wall_seconds"]} for t in timings],
                          "wall_seconds", "size")}
    return _report(config, rows, "solver_calls", x_name="size"), timing_summary


def _r_squared(x, y):
    if len(np.unique(x)) < 2:
        return float("nan")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    return float(1.0 - resid @ resid / total) if total > 0 else 1.0


def run_train(config):
    """Joint training only; reports the predictor's test accuracy and value per seed."""
    rows, logs = [], {}
    for seed in config.seeds:
        train, test = config.dataset.split(seed)
        log = run(train, test, config.trainer_for(seed))
        loss, acc = value(log.theta, test)
        rows.append({"fraction": config.trainer.gamma, "seed": seed, "accuracy": acc, "loss": loss,
                     "selected": int(sum(log.selected_counts()))})
        logs[seed] = log
    return _report(config, rows, "accuracy"), logs


def run_experiment(config):
    """Dispatch on ``config.experiment``; returns ``(report, extras)``."""
    kind = config.experiment
    if kind == "addition":
        return run_addition_curve(config), {}
    if kind == "removal":
        return run_removal_curve(config), {}
    if kind == "mislabel":
        return run_mislabel(config), {}
    if kind == "ndcg":
        return run_ndcg(config), {}
    if kind == "timing":
        report, timings = run_timing(config)
        return report, {"timings": timings}
    if kind == "train":
        report, logs = run_train(config)
        return report, {"logs": logs}
    raise ConfigError("gen-data is not a report-producing experiment")


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def _fmt(v):
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def emit_report(report, out_dir, extras=None):
    """Write ``report.json``, ``curve.csv`` and ``curve.dat`` (plus any extras) to ``out_dir``."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create {out_dir}: {exc.strerror}") from None
    _write(os.path.join(out_dir, "report.json"), _dumps(report.to_dict()))
    x = report.x_name
    extras = extras or {}
    aggregate = extras["timings"]["aggregate"] if "timings" in extras else report.aggregate
    csv_lines = [f"{x},mean,stddev"]
    dat_lines = [f"# {x} mean"]
    for entry in aggregate:
        csv_lines.append(f"{entry[x]!r},{_fmt(entry.get('mean'))},{_fmt(entry.get('stddev'))}")
        dat_lines.append(f"{entry[x]!r} {_fmt(entry.get('mean'))}")
    _write(os.path.join(out_dir, "curve.csv"), "\n".join(csv_lines) + "\n")
    _write(os.path.join(out_dir, "curve.dat"), "\n".join(dat_lines) + "\n")
    if "timings" in extras:
        _write(os.path.join(out_dir, "timings.json"), _dumps(extras["timings"]))
    for seed, log in extras.get("logs", {}).items():
        _write(os.path.join(out_dir, f"trainlog_seed{seed}.json"), log.to_json(include_timing=False) + "\n")


def write_dataset(n, d, seed, out):
    """Generate synthetic data and save it as CSV."""
    ds = gen_synthetic(n, d, seed)
    save_csv(ds, out)
    return ds
