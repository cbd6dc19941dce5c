"""Experiment configs, single runs, sigma grid search and method comparison.

A run directory holds::

    config.json           config echo (input to reproduce the run)
    checkpoint*.ckpt      one file, or checkpoint_p / checkpoint_mu for two-model
    report.csv/.json      graded report on the test split
    summary.txt           human-readable digest
    record.json           run metadata (the only file carrying wall-clock time)
"""
import copy
import json
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import network, synthgen
from .errors import ConfigError, DivergenceError, DomainError, SplitMismatchError
from .hurdle_dist import SIGMA_MIN, MarginalPrior, hurdle_mean
from .losses import HurdleObjective, MSEObjective, WeightScheme
from .verify import DEFAULT_THRESHOLDS, REPORT_COLUMNS, GradedReport, check_thresholds, full_report

METHODS = ("hurdle_imdl", "hurdle_noimdl", "omse", "lwmse", "nwmse")
HURDLE_METHODS = ("hurdle_imdl", "hurdle_noimdl")
ESTIMATIONS = ("single_model", "two_model")
DEFAULT_SIGMA_GRID = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7)

# Default training constants for the desk-scale benchmark; Adam constants
# are the optimizer defaults.
DEFAULT_TRAIN = {"learning_rate": 1e-3, "weight_decay": 1e-4, "batch_size": 1024,
                 "max_epochs": 100, "patience": 10}

STANDARD_BENCHMARK = {
    "dataset": {
        "seed": 42,
        "sizes": [200_000, 25_000, 25_000],
        "prior": synthgen.DEFAULT_PRIOR.to_dict(),
        "forward_model": synthgen.ForwardModel().to_dict(),
    },
    "method": "hurdle_imdl",
    "estimation": "single_model",
    "sigma": 0.5,
    "sigma_grid": list(DEFAULT_SIGMA_GRID),
    "train": dict(DEFAULT_TRAIN),
    "net": {"hidden": [64, 64]},
    "thresholds": list(DEFAULT_THRESHOLDS),
    "lwmse_beta": 1.0,
    "seed": 42,
    "output_dir": "runs/standard",
}


@dataclass
class DatasetSpec:
    """Either a dataset file ``path`` or generator parameters."""

    path: str = None
    seed: int = 42
    sizes: tuple = (200_000, 25_000, 25_000)
    prior: dict = field(default_factory=lambda: synthgen.DEFAULT_PRIOR.to_dict())
    forward_model: dict = field(default_factory=lambda: synthgen.ForwardModel().to_dict())

    def key(self):
        if self.path is not None:
            return ("path", os.path.abspath(self.path))
        return ("gen", json.dumps(self.to_dict(), sort_keys=True))

    def to_dict(self):
        if self.path is not None:
            return {"path": self.path}
        return {"seed": self.seed, "sizes": list(self.sizes),
                "prior": dict(self.prior), "forward_model": dict(self.forward_model)}


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    method: str = "hurdle_imdl"
    estimation: str = "single_model"
    sigma: float = 0.5
    sigma_grid: tuple = DEFAULT_SIGMA_GRID
    train: dict = field(default_factory=lambda: dict(DEFAULT_TRAIN))
    net: dict = field(default_factory=lambda: {"hidden": [64, 64]})
    thresholds: tuple = DEFAULT_THRESHOLDS
    lwmse_beta: float = 1.0
    seed: int = 42
    output_dir: str = "runs/default"
    name: str = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.estimation not in ESTIMATIONS:
            raise ConfigError(f"estimation must be one of {ESTIMATIONS}")
        if self.estimation == "two_model" and self.method not in HURDLE_METHODS:
            raise ConfigError("two_model estimation is only defined for hurdle methods")
        if not (isinstance(self.sigma, (int, float)) and self.sigma >= SIGMA_MIN):
            raise ConfigError(f"sigma must be a number >= {SIGMA_MIN}")
        self.sigma_grid = tuple(float(s) for s in (self.sigma_grid or ()))
        self.thresholds = tuple(float(t) for t in self.thresholds)
        try:
            check_thresholds(self.thresholds)
            self.train_config()
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def label(self):
        if self.name:
            return self.name
        return self.method if self.estimation == "single_model" else f"{self.method}-two_model"

    def train_config(self):
        unknown = set(self.train) - {f.name for f in fields(network.TrainConfig)} - {"sigma"}
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        kw = {k: v for k, v in self.train.items() if k != "sigma"}
        return network.TrainConfig(sigma=float(self.sigma), **kw)

    def to_dict(self):
        return {
            "dataset": self.dataset.to_dict(),
            "method": self.method,
            "estimation": self.estimation,
            "sigma": self.sigma,
            "sigma_grid": list(self.sigma_grid),
            "train": dict(self.train),
            "net": dict(self.net),
            "thresholds": list(self.thresholds),
            "lwmse_beta": self.lwmse_beta,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d):
        d = copy.deepcopy(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        ds = d.pop("dataset", {}) or {}
        ds_known = {f.name for f in fields(DatasetSpec)}
        if set(ds) - ds_known:
            raise ConfigError(f"unknown dataset keys: {sorted(set(ds) - ds_known)}")
        if "sizes" in ds:
            ds["sizes"] = tuple(int(s) for s in ds["sizes"])
            if len(ds["sizes"]) != 3 or min(ds["sizes"]) < 1:
                raise ConfigError("dataset.sizes needs three positive split sizes")
        try:
            return cls(dataset=DatasetSpec(**ds), **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path, overrides=()):
    """Read a JSON config and apply ``key.sub=value`` overrides."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(apply_overrides(d, overrides))


def apply_overrides(d, overrides):
    d = copy.deepcopy(d)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = value
    return d


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

_DATASETS = {}


def load_or_generate(spec):
    key = spec.key()
    if key not in _DATASETS:
        if spec.path is not None:
            _DATASETS[key] = synthgen.load_dataset(spec.path)
        else:
            try:
                prior = MarginalPrior(**spec.prior)
                fm = synthgen.ForwardModel.from_dict(spec.forward_model)
            except (TypeError, DomainError) as exc:
                raise ConfigError(f"invalid dataset generator parameters: {exc}") from exc
            _DATASETS[key] = synthgen.generate_splits(prior, fm, spec.sizes, spec.seed)
    return _DATASETS[key]


# ---------------------------------------------------------------------------
# Single run
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    config: dict
    checkpoint_paths: list
    report: GradedReport
    wall_clock: float
    seed: int
    test_fingerprint: str
    prior: dict
    checkpoints: list = field(default_factory=list, repr=False)


def _net_config(cfg, input_dim, heads, seed):
    return network.NetConfig(input_dim, tuple(cfg.net.get("hidden", (64, 64))), seed, heads)


def fit(cfg, ds):
    """Train per config; returns ``(checkpoints, prior)``."""
    tr, va = ds.subset("train"), ds.subset("val")
    prior = MarginalPrior.from_labels(tr[1])
    tcfg = cfg.train_config()
    dim = ds.features.shape[1]
    if cfg.method in HURDLE_METHODS:
        use_corr = cfg.method == "hurdle_imdl"
        if cfg.estimation == "single_model":
            net = network.MLP(_net_config(cfg, dim, "joint", cfg.seed))
            obj = HurdleObjective(prior, cfg.sigma, use_corr=use_corr)
            return [network.train(net, tr, va, tcfg, obj)], prior
        p_net = network.MLP(_net_config(cfg, dim, "p_only", cfg.seed))
        mu_net = network.MLP(_net_config(cfg, dim, "mu_only", cfg.seed + 1))
        return list(network.two_model_train(p_net, mu_net, tr, va, tcfg, prior,
                                            use_corr=use_corr)), prior
    scheme = WeightScheme(cfg.method, beta=cfg.lwmse_beta).fit(tr[1])
    net = network.MLP(_net_config(cfg, dim, "mu_only", cfg.seed))
    return [network.train(net, tr, va, tcfg, MSEObjective(scheme))], prior


def retrieve(checkpoints, method, features, sigma):
    """Rain-rate retrievals from trained checkpoints.

    Hurdle variants return the conditional mean ``(1 - p) exp(mu + sigma^2/2)``;
    MSE baselines return the raw output clamped at zero.
    """
    if method in HURDLE_METHODS:
        if len(checkpoints) == 1:
            p, mu = network.heads("joint", checkpoints[0].outputs(features))
        else:
            p, _ = network.heads("p_only", checkpoints[0].outputs(features))
            _, mu = network.heads("mu_only", checkpoints[1].outputs(features))
        return hurdle_mean(p, mu, sigma)
    return np.maximum(checkpoints[0].outputs(features)[:, 0], 0.0)


def _checkpoint_names(cfg):
    if cfg.estimation == "two_model":
        return ["checkpoint_p.ckpt", "checkpoint_mu.ckpt"]
    return ["checkpoint.ckpt"]


def _summary(cfg, report, prior, wall):
    lines = [f"method: {cfg.label}", f"sigma: {cfg.sigma}", f"seed: {cfg.seed}",
             f"prior (train): lmu={prior.lmu:.4f} lsigma={prior.lsigma:.4f} p0={prior.p0:.4f}",
             "", "threshold  n_grade      rmse        me     pod     far     ets"]
    fmt = lambda v, w, p: f"{'-':>{w}}" if v is None else f"{v:{w}.{p}f}"  # noqa: E731
    for r in report.rows:
        lines.append(f"{r.threshold:9g} {r.n_grade:8d} {fmt(r.rmse, 9, 3)} {fmt(r.me, 9, 3)} "
                     f"{fmt(r.pod, 7, 3)} {fmt(r.far, 7, 3)} {fmt(r.ets, 7, 3)}")
    lines.append("")
    lines.append(f"wall clock: {wall:.1f} s")
    return "\n".join(lines) + "\n"


def write_report(report, out_dir, stem="report"):
    with open(os.path.join(out_dir, f"{stem}.csv"), "w") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(out_dir, f"{stem}.json"), "w") as fh:
        fh.write(report.to_json())


def run(cfg, persist=True):
    """Generate or load data, train, evaluate on the test split, persist."""
    t0 = time.perf_counter()
    ds = load_or_generate(cfg.dataset)
    try:
        checkpoints, prior = fit(cfg, ds)
    except DivergenceError as exc:
        exc.run_dir = cfg.output_dir
        exc.args = (f"run {cfg.output_dir}: {exc.args[0]}",)
        raise
    xte, yte = ds.subset("test")
    report = full_report(retrieve(checkpoints, cfg.method, xte, cfg.sigma), yte, cfg.thresholds)
    wall = time.perf_counter() - t0
    try:
        return _persist(cfg, ds, checkpoints, prior, report, wall, persist)
    except OSError as exc:
        raise OSError(f"run {cfg.output_dir}: {exc}") from exc


def _persist(cfg, ds, checkpoints, prior, report, wall, persist):
    paths = []
    if persist:
        os.makedirs(cfg.output_dir, exist_ok=True)
        for name, ck in zip(_checkpoint_names(cfg), checkpoints):
            path = os.path.join(cfg.output_dir, name)
            network.save(ck, path)
            paths.append(path)
        with open(os.path.join(cfg.output_dir, "config.json"), "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_report(report, cfg.output_dir)
        with open(os.path.join(cfg.output_dir, "summary.txt"), "w") as fh:
            fh.write(_summary(cfg, report, prior, wall))
    record = RunRecord(cfg.to_dict(), paths, report, wall, cfg.seed,
                       ds.fingerprint("test"), prior.to_dict(), checkpoints)
    if persist:
        meta = {k: v for k, v in record.__dict__.items() if k not in ("report", "checkpoints")}
        meta["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        with open(os.path.join(cfg.output_dir, "record.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return record


def evaluate(run_dir, dataset_path=None, thresholds=None):
    """Re-score a persisted run on the test split of its (or another) dataset."""
    with open(os.path.join(run_dir, "config.json")) as fh:
        cfg = ExperimentConfig.from_dict(json.load(fh))
    if dataset_path is not None:
        cfg = replace(cfg, dataset=DatasetSpec(path=dataset_path))
    ds = load_or_generate(cfg.dataset)
    cks = [network.load(os.path.join(run_dir, n)) for n in _checkpoint_names(cfg)]
    xte, yte = ds.subset("test")
    return full_report(retrieve(cks, cfg.method, xte, cfg.sigma), yte,
                       thresholds or cfg.thresholds)


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------

def _fmt_cell(v):
    return "" if v is None else repr(v)


def sigma_grid(cfg, persist=True, runner=None):
    """One run per sigma on shared data and seed.

    Returns the list of RunRecords and writes ``sigma_grid.csv`` with one row
    per (sigma, threshold) under ``cfg.output_dir``.
    """
    runner = runner or run
    if cfg.method not in HURDLE_METHODS:
        raise ConfigError("sigma grid search applies to hurdle methods only")
    if not cfg.sigma_grid:
        raise ConfigError("sigma_grid is empty")
    if any(not (0 < s <= 2) for s in cfg.sigma_grid):
        raise ConfigError("sigma_grid values must lie in (0, 2]")
    records = []
    for s in cfg.sigma_grid:
        sub = replace(cfg, sigma=s, output_dir=os.path.join(cfg.output_dir, f"sigma_{s:g}"))
        records.append(runner(sub))
    if persist:
        os.makedirs(cfg.output_dir, exist_ok=True)
        with open(os.path.join(cfg.output_dir, "sigma_grid.csv"), "w") as fh:
            fh.write(",".join(("sigma",) + REPORT_COLUMNS) + "\n")
            for s, rec in zip(cfg.sigma_grid, records):
                for row in rec.report.to_records():
                    fh.write(",".join([repr(s)] + [_fmt_cell(row[k]) for k in REPORT_COLUMNS]) + "\n")
    return records


@dataclass
class Comparison:
    labels: list
    reports: list

    def rows(self):
        out = []
        for label, rep in zip(self.labels, self.reports):
            for rec in rep.to_records():
                out.append({"method": label, **rec})
        return out

    def to_csv(self):
        lines = [",".join(("method",) + REPORT_COLUMNS)]
        for r in self.rows():
            lines.append(",".join([r["method"]] + [_fmt_cell(r[k]) for k in REPORT_COLUMNS]))
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({"columns": ["method", *REPORT_COLUMNS], "rows": self.rows()},
                          indent=2) + "\n"

    def report(self, label):
        return self.reports[self.labels.index(label)]


def compare_records(records, labels=None):
    if not records:
        raise ConfigError("nothing to compare")
    fps = {r.test_fingerprint for r in records}
    if len(fps) != 1:
        raise SplitMismatchError("runs were evaluated on different test splits")
    ths = {tuple(r.report.column("threshold")) for r in records}
    if len(ths) != 1:
        raise SplitMismatchError("runs used different grade thresholds")
    if labels is None:
        labels = [ExperimentConfig.from_dict(r.config).label for r in records]
    return Comparison(list(labels), [r.report for r in records])


def compare(configs, output_dir=None, runner=None):
    """Run every config and tabulate their graded reports side by side."""
    runner = runner or run
    keys = {c.dataset.key() for c in configs}
    if len(keys) != 1:
        raise SplitMismatchError("configs do not share one dataset")
    cmp = compare_records([runner(c) for c in configs])
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, "comparison.csv"), "w") as fh:
            fh.write(cmp.to_csv())
        with open(os.path.join(output_dir, "comparison.json"), "w") as fh:
            fh.write(cmp.to_json())
    return cmp
