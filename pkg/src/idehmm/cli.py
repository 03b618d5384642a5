"""Command-line pipeline: simulate datasets, infer θ, train the IDE, predict states, score.

Usage::

    idehmm <subcommand> --config exp.yaml [--seed N] [--workers N] [--out DIR]

Subcommands: ``simulate``, ``infer-params``, ``train-ide``, ``predict-states
--method {ide,smc,prdyn,guided,kalman}``, ``abc``, ``pipeline``. The
environment variables ``IDEHMM_OUT`` and ``IDEHMM_WORKERS`` override the
output directory and worker count when the flags are absent.

Config schema (YAML)::

    model: lv                 # nonlinear_ssm | linear_gaussian | lv | pky
    seed: 1                   # required
    out: runs/lv
    datasets: 10
    model_options: {}         # keyword arguments of the model constructor
    true_theta: null          # defaults to the model's documented setting
    methods: [ide, smc, prdyn, abc]
    snle:  {rounds: 5, n_first: 2000, n_round: 500, burn_in: 1000, thin: 5,
            n_posterior: 500, summary_factor: 5}
    train: {batch_size: 256, lr: 0.0005, val_fraction: 0.1, patience: 20,
            max_epochs: 200, n_blocks: 5, hidden: 50}
    ide:   {P: 1000, n_simulations: 1000, paths: 200,
            transform: asinh}  # identity for the Gaussian models
    smc:   {P: 100}
    abc:   {particles: 1000, budget: 100000}

Layout of ``out``::

    datasets/ds000/trajectory.csv      time,x1..xK,y1..yL (ground truth)
    datasets/ds000/theta_true.csv
    datasets/ds000/theta_samples.csv   SNLE posterior draws
    datasets/ds000/states_<m>.csv      sample,time,x1..xK
    datasets/ds000/predictive_<m>.csv  sample,time,y1..yL
    datasets/ds000/ess_<m>.csv         sample,time,ess
    datasets/ds000/abc_population.csv
    shared/round1.npz, shared/snle_round1.flow
    ide/manifest.json, ide/approx.flow, ide/true.flow
    records/<stage>.json                run records
    results.csv
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import metrics
from .abcsmc import abc_posterior_predictive, abc_smc, population_csv
from .core import CountingModel, ObsSeries, RngStream, StatePath, simulate_joint
from .flows import TrainConfig, load_flow, save_flow, train_flow
from .ide import IdeModel, build_training_set, predict_states, train_ide, training_set_from_simulations
from .simulators import (
    LV_TRUE_THETA,
    PKY_TRUE_THETA,
    LinearGaussianOracleConfig,
    NonlinearSSMConfig,
    kalman_smoother,
    linear_gaussian,
    lv_model,
    nonlinear_ssm,
    pky_model,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .simulators.summaries import format_float
from .smc import guided_filter, prdyn_paths, push_through_observation, smc_paths
from .snle import Simulations, SnleConfig, simulate_prior, snle_run

log = logging.getLogger("idehmm")

MODELS = ("nonlinear_ssm", "linear_gaussian", "lv", "pky")
METHODS = ("ide", "smc", "prdyn", "guided", "kalman", "abc")


class UsageError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    def __init__(self, path: Path, hint: str):
        super().__init__(f"missing upstream artifact {path} ({hint})")


# -- configuration ------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    model: str
    seed: int
    out: str = "runs"
    datasets: int = 10
    model_options: dict = field(default_factory=dict)
    true_theta: list | None = None
    methods: list = field(default_factory=lambda: ["ide", "smc", "prdyn", "abc"])
    snle: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    ide: dict = field(default_factory=dict)
    smc: dict = field(default_factory=dict)
    abc: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise UsageError("config must be a mapping")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "model" not in d or d["model"] not in MODELS:
            raise UsageError(f"model must be one of {MODELS}, got {d.get('model')!r}")
        if d.get("seed") is None:
            raise UsageError("a seed is required")
        cfg = cls(**d)
        bad = [m for m in cfg.methods if m not in METHODS]
        if bad:
            raise UsageError(f"unknown methods {bad}")
        if cfg.datasets < 1:
            raise UsageError("datasets must be >= 1")
        cfg.snle_config()
        cfg.train_config()
        return cfg

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @property
    def hash(self) -> str:
        """Digest of every setting that affects results (the output path does not)."""
        d = {k: v for k, v in self.to_dict().items() if k != "out"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def train_config(self) -> TrainConfig:
        opts = {"max_epochs": 200, **self.train}
        return TrainConfig(seed=int(self.seed), **opts)

    def snle_config(self) -> SnleConfig:
        opts = {"rounds": 5, "n_first": 2000, "n_round": 500, **self.snle}
        return SnleConfig(train=self.train_config(), **opts)

    @property
    def has_params(self) -> bool:
        return self.model in ("lv", "pky")

    @property
    def ide_P(self) -> int:
        return int(self.ide.get("P", 1000))

    @property
    def ide_transform(self) -> str:
        """``asinh`` by default for the count-valued kinetic models."""
        return str(self.ide.get("transform", "asinh" if self.has_params else "identity"))

    @property
    def n_paths(self) -> int:
        """Number of posterior paths per dataset for parameter-free models."""
        return int(self.ide.get("paths", 200))


def load_config(path, seed=None, out=None) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    d = yaml.safe_load(p.read_text()) or {}
    if seed is not None:
        d["seed"] = seed
    if out is not None:
        d["out"] = out
    elif os.environ.get("IDEHMM_OUT"):
        d["out"] = os.environ["IDEHMM_OUT"]
    return ExperimentConfig.from_dict(d)


def build_model(cfg: ExperimentConfig):
    opts = dict(cfg.model_options)
    if cfg.model == "lv":
        if "c2_bounds" in opts:
            opts["c2_bounds"] = tuple(opts["c2_bounds"])
        return lv_model(**opts)
    if cfg.model == "pky":
        return pky_model(**opts)
    if cfg.model == "nonlinear_ssm":
        return nonlinear_ssm(NonlinearSSMConfig(**{"K": 3, "L": 3, "M": 100, **opts}))
    return linear_gaussian(LinearGaussianOracleConfig(**opts))


def true_theta(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.true_theta is not None:
        return np.asarray(cfg.true_theta, dtype=float)
    return {"lv": LV_TRUE_THETA, "pky": PKY_TRUE_THETA}.get(cfg.model, np.zeros(0))


# -- files ---------------------------------------------------------------------------


class Layout:
    def __init__(self, out):
        self.root = Path(out)

    def ds(self, i: int) -> Path:
        return self.root / "datasets" / f"ds{i:03d}"

    @property
    def shared(self) -> Path:
        return self.root / "shared"

    @property
    def ide(self) -> Path:
        return self.root / "ide"

    def record(self, stage: str) -> Path:
        return self.root / "records" / f"{stage}.json"


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else format_float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_samples_csv(path: Path, arr: np.ndarray, times, prefix: str) -> None:
    n, M, K = arr.shape
    header = ["sample", "time", *(f"{prefix}{k + 1}" for k in range(K))]
    rows = ([i, times[t], *arr[i, t]] for i in range(n) for t in range(M))
    _write_csv(path, header, rows)


def read_samples_csv(path: Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = int(data[:, 0].max()) + 1
    return data[:, 2:].reshape(n, -1, data.shape[1] - 2)


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(path, hint)
    return path


def load_dataset(layout: Layout, i: int) -> tuple[StatePath, ObsSeries]:
    return read_trajectory_csv(_require(layout.ds(i) / "trajectory.csv", "run `simulate` first"))


def load_theta_samples(layout: Layout, i: int) -> np.ndarray:
    path = _require(layout.ds(i) / "theta_samples.csv", "run `infer-params` first")
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_record(layout: Layout, stage: str, cfg: ExperimentConfig, wall: float, calls: int, extra=None):
    rec = {
        "stage": stage,
        "config_hash": cfg.hash,
        "config": cfg.to_dict(),
        "seed": int(cfg.seed),
        "wall_time_s": wall,
        "simulator_calls": int(calls),
    }
    if extra:
        rec.update(extra)
    path = layout.record(stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rec, indent=2, sort_keys=True, default=str))
    return rec


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _root(cfg) -> RngStream:
    return RngStream(int(cfg.seed))


# -- stages ---------------------------------------------------------------------------


def stage_simulate(cfg: ExperimentConfig, workers: int = 1) -> dict:
    layout = Layout(cfg.out)
    model = CountingModel(build_model(cfg))
    theta = true_theta(cfg)
    root = _root(cfg)
    seeds = {}
    for i in range(cfg.datasets):
        stream = root.child("simulate", i)
        x, y = simulate_joint(model, theta, stream)
        d = layout.ds(i)
        d.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(d / "trajectory.csv", x, y)
        names = list(model.param_names)
        _write_csv(d / "theta_true.csv", names, [list(theta)] if names else [])
        seeds[f"ds{i:03d}"] = {"seed": stream.seed, "stream": list(stream.stream)}
    manifest = {"model": cfg.model, "datasets": cfg.datasets, "config_hash": cfg.hash, "streams": seeds}
    (layout.root / "datasets" / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return {"calls": model.calls}


def shared_round1(cfg: ExperimentConfig) -> tuple[Simulations, int]:
    """Prior simulations shared by SNLE round 1 and IDE training (cached on disk)."""
    layout = Layout(cfg.out)
    path = layout.shared / "round1.npz"
    if path.exists():
        z = np.load(path)
        return Simulations(z["thetas"], z["x"], z["y"], z["ok"]), 0
    model = CountingModel(build_model(cfg))
    n = cfg.snle_config().n_first
    sims = simulate_prior(model, model.prior, n, _root(cfg).child("round1").generator())
    layout.shared.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, thetas=sims.thetas, x=sims.x, y=sims.y, ok=sims.ok)
    return sims, model.calls


def shared_round1_flow(cfg: ExperimentConfig, sims: Simulations):
    layout = Layout(cfg.out)
    path = layout.shared / "snle_round1.flow"
    if path.exists():
        return load_flow(path)
    sc = cfg.snle_config()
    flow, _ = train_flow(sims.summaries(sc.summary_factor), sims.thetas[sims.ok], sc.train,
                         _root(cfg).child("snle-round1-train").generator())
    save_flow(flow, path)
    return flow


def _infer_one(args):
    cfg, i = args
    layout = Layout(cfg.out)
    _, obs = load_dataset(layout, i)
    sims, _ = shared_round1(cfg)
    flow = shared_round1_flow(cfg, sims)
    model = CountingModel(build_model(cfg))
    res = snle_run(model, None, obs, cfg.snle_config(), _root(cfg).child("snle", i),
                   initial_simulations=sims, initial_flow=flow)
    res.to_csv(layout.ds(i) / "theta_samples.csv")
    return model.calls


def stage_infer_params(cfg: ExperimentConfig, workers: int = 1, datasets=None) -> dict:
    if not cfg.has_params:
        raise UsageError(f"model {cfg.model} has no parameters to infer")
    idx = range(cfg.datasets) if datasets is None else datasets
    for i in idx:
        load_dataset(Layout(cfg.out), i)
    sims, calls = shared_round1(cfg)
    shared_round1_flow(cfg, sims)
    calls += sum(_map(_infer_one, [(cfg, i) for i in idx], workers))
    return {"calls": calls}


def stage_train_ide(cfg: ExperimentConfig, workers: int = 1) -> dict:
    layout = Layout(cfg.out)
    calls = 0
    if cfg.has_params:
        sims, calls = shared_round1(cfg)
        ts = training_set_from_simulations(sims.x, sims.y, sims.thetas, sims.ok)
    else:
        model = CountingModel(build_model(cfg))
        n = int(cfg.ide.get("n_simulations", 1000))
        ts = build_training_set(model, None, n, _root(cfg).child("ide-sims").generator())
        calls = model.calls
    ide = train_ide(ts, cfg.train_config(), _root(cfg).child("ide-train"), P=cfg.ide_P, transform=cfg.ide_transform)
    ide.save(layout.ide)
    return {"calls": calls, "training_examples": ts.counts}


def _thetas_for(cfg, layout, i, model):
    if cfg.has_params:
        return load_theta_samples(layout, i)
    return np.zeros((cfg.n_paths, 0))


def _predict_one(args):
    cfg, i, method = args
    layout = Layout(cfg.out)
    model = CountingModel(build_model(cfg))
    path, obs = load_dataset(layout, i)
    y = obs.observations
    rng = _root(cfg).child("predict", method, i)
    ess = None
    if method == "ide":
        ide = IdeModel.load(_require(layout.ide, "run `train-ide` first"))
        thetas = _thetas_for(cfg, layout, i, model)
        paths, weights = predict_states(ide, thetas, y, rng.child("states"), P=cfg.ide_P, x0=model.x0())
        ess = weights.ess
        yrep = push_through_observation(model, paths, thetas, rng.child("obs"))
    elif method == "smc":
        thetas = _thetas_for(cfg, layout, i, model)
        paths, ess, ok = smc_paths(model, thetas, y, int(cfg.smc.get("P", 100)), rng.child("states"),
                                   return_ess=True, skip_diverged=True)
        thetas = thetas[ok]
        yrep = push_through_observation(model, paths, thetas, rng.child("obs"))
    elif method == "prdyn":
        thetas = _thetas_for(cfg, layout, i, model)
        paths, ok = prdyn_paths(model, thetas, rng.child("states"), skip_diverged=True)
        thetas = thetas[ok]
        yrep = push_through_observation(model, paths, thetas, rng.child("obs"))
    elif method == "guided":
        if cfg.has_params:
            raise UsageError("the guided filter is only available for Gaussian state-space models")
        n = cfg.n_paths
        P = int(cfg.smc.get("P_guided", cfg.smc.get("P", 100)))
        paths = np.empty((n, model.M, model.K))
        ess = np.empty((n, model.M))
        for j in range(n):
            res = guided_filter(model.cfg, y, P, rng.child("states", j))
            paths[j], ess[j] = res.paths[0], res.ess
        thetas = np.zeros((n, 0))
        yrep = push_through_observation(model, paths, thetas, rng.child("obs"))
    elif method == "kalman":
        if cfg.model != "linear_gaussian":
            raise UsageError("the Kalman oracle is only available for the linear_gaussian model")
        mu, cov = kalman_smoother(model.cfg, y)
        n = cfg.n_paths
        g = rng.child("states").generator()
        # symmetric square root; row 0 has zero covariance
        vals, vecs = np.linalg.eigh(cov)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))[:, None, :]
        paths = mu[None] + np.einsum("tij,ntj->nti", root, g.standard_normal((n, model.M, model.K)))
        thetas = np.zeros((n, 0))
        yrep = push_through_observation(model, paths, thetas, rng.child("obs"))
    else:
        raise UsageError(f"unknown method {method}")
    d = layout.ds(i)
    write_samples_csv(d / f"states_{method}.csv", paths, path.times, "x")
    write_samples_csv(d / f"predictive_{method}.csv", yrep, path.times, "y")
    if ess is not None:
        rows = ([s, path.times[t], ess[s, t]] for s in range(len(ess)) for t in range(ess.shape[1]))
        _write_csv(d / f"ess_{method}.csv", ["sample", "time", "ess"], rows)
    return model.calls


def stage_predict(cfg: ExperimentConfig, method: str, workers: int = 1, datasets=None) -> dict:
    if method not in METHODS or method == "abc":
        raise UsageError(f"predict-states method must be one of ide, smc, prdyn, guided, kalman; got {method}")
    layout = Layout(cfg.out)
    idx = list(range(cfg.datasets) if datasets is None else datasets)
    for i in idx:
        load_dataset(layout, i)
        if cfg.has_params:
            _require(layout.ds(i) / "theta_samples.csv", "run `infer-params` first")
    if method == "ide":
        _require(layout.ide / "manifest.json", "run `train-ide` first")
    return {"calls": sum(_map(_predict_one, [(cfg, i, method) for i in idx], workers))}


def _abc_one(args):
    cfg, i = args
    layout = Layout(cfg.out)
    model = CountingModel(build_model(cfg))
    path, obs = load_dataset(layout, i)
    rng = _root(cfg).child("abc", i)
    pop = abc_smc(model, None, obs, int(cfg.abc.get("particles", 1000)), int(cfg.abc.get("budget", 100_000)),
                  summary_factor=cfg.snle_config().summary_factor, rng=rng.child("smc"))
    d = layout.ds(i)
    (d / "abc_population.csv").write_text(population_csv(pop, model.param_names), encoding="utf-8")
    paths, yrep = abc_posterior_predictive(pop, model, rng.child("predictive").generator())
    write_samples_csv(d / "states_abc.csv", paths, path.times, "x")
    write_samples_csv(d / "predictive_abc.csv", yrep, path.times, "y")
    if model.calls != pop.sim_calls:
        raise RuntimeError(f"simulator-call mismatch: counted {model.calls}, ABC reported {pop.sim_calls}")
    return model.calls


def stage_abc(cfg: ExperimentConfig, workers: int = 1, datasets=None) -> dict:
    if not cfg.has_params:
        raise UsageError(f"ABC-SMC needs a parameterised model, got {cfg.model}")
    idx = list(range(cfg.datasets) if datasets is None else datasets)
    for i in idx:
        load_dataset(Layout(cfg.out), i)
    return {"calls": sum(_map(_abc_one, [(cfg, i) for i in idx], workers))}


def _fmt_summary(values) -> str:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if len(v) == 0:
        return "nan"
    sd = v.std(ddof=1) if len(v) > 1 else 0.0
    return f"{v.mean():.4f}±{sd:.4f}"


def stage_metrics(cfg: ExperimentConfig, methods=None) -> list[list]:
    layout = Layout(cfg.out)
    model = build_model(cfg)
    methods = list(cfg.methods if methods is None else methods)
    if cfg.model == "linear_gaussian" and "kalman" not in methods:
        methods.append("kalman")
    rows = []
    for i in range(cfg.datasets):
        try:
            path, _ = load_dataset(layout, i)
        except FileNotFoundError:
            continue
        truth_x = path.states
        truth_y = model.obs_mean(truth_x, None)
        for m in methods:
            for target, fname, truth in (("states", f"states_{m}.csv", truth_x),
                                         ("predictive", f"predictive_{m}.csv", truth_y)):
                f = layout.ds(i) / fname
                if not f.exists():
                    continue
                s = read_samples_csv(f)
                # the known initial state carries no information
                s, tr = s[:, 1:], truth[1:]
                ec = metrics.empirical_coverage(tr, s) if len(s) >= 20 else float("nan")
                rows.append([f"ds{i:03d}", m, target, metrics.mse(tr, s), ec, metrics.coefficient_of_variation(s)])
    summary = []
    keys = sorted({(r[1], r[2]) for r in rows}, key=lambda k: (methods.index(k[0]) if k[0] in methods else 99, k[1]))
    for m, target in keys:
        sel = [r for r in rows if r[1] == m and r[2] == target]
        summary.append(["mean±std", m, target, *(_fmt_summary([r[c] for r in sel]) for c in (3, 4, 5))])
    _write_csv(layout.root / "results.csv", ["dataset", "method", "target", "MSE", "EC90", "CV"], rows + summary)
    return rows


def stage_pipeline(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """All stages with resume: outputs already on disk are not recomputed."""
    layout = Layout(cfg.out)
    calls = 0
    failures: dict[str, list[str]] = {}
    if not all((layout.ds(i) / "trajectory.csv").exists() for i in range(cfg.datasets)):
        calls += _timed(cfg, "simulate", stage_simulate, workers)["calls"]
    ok = list(range(cfg.datasets))

    def fail(i, stage, err):
        failures.setdefault(f"ds{i:03d}", []).append(f"{stage}: {type(err).__name__}: {err}")
        log.error("dataset %d failed in %s: %s", i, stage, err)

    if cfg.has_params:
        todo = [i for i in ok if not (layout.ds(i) / "theta_samples.csv").exists()]
        for i in todo:
            try:
                calls += _timed(cfg, f"infer-params_ds{i:03d}", stage_infer_params, workers, datasets=[i])["calls"]
            except Exception as err:  # noqa: BLE001 - recorded per dataset
                fail(i, "infer-params", err)
        ok = [i for i in ok if (layout.ds(i) / "theta_samples.csv").exists()]
    methods = [m for m in cfg.methods if m != "abc"]
    if cfg.model == "linear_gaussian" and "kalman" not in methods:
        methods.append("kalman")
    if "ide" in methods and not (layout.ide / "manifest.json").exists():
        calls += _timed(cfg, "train-ide", stage_train_ide, workers)["calls"]
    for m in methods:
        for i in list(ok):
            if (layout.ds(i) / f"states_{m}.csv").exists():
                continue
            try:
                calls += _timed(cfg, f"predict-{m}_ds{i:03d}", stage_predict, m, workers, datasets=[i])["calls"]
            except Exception as err:  # noqa: BLE001
                fail(i, f"predict-{m}", err)
    if "abc" in cfg.methods and cfg.has_params:
        for i in range(cfg.datasets):
            if (layout.ds(i) / "states_abc.csv").exists():
                continue
            try:
                calls += _timed(cfg, f"abc_ds{i:03d}", stage_abc, workers, datasets=[i])["calls"]
            except Exception as err:  # noqa: BLE001
                fail(i, "abc", err)
    rows = stage_metrics(cfg)
    (layout.root / "failures.json").write_text(json.dumps(failures, indent=2, sort_keys=True))
    scored = {r[0] for r in rows}
    return {"calls": calls, "failures": failures, "all_failed": len(scored) == 0}


def _timed(cfg, name, fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(cfg, *args, **kwargs)
    write_record(Layout(cfg.out), name, cfg, time.perf_counter() - t0, out.get("calls", 0),
                 {k: v for k, v in out.items() if k != "calls"})
    return out


# -- entry point -------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment YAML file")
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    common.add_argument("--workers", type=int, default=None, help="worker processes (default 1)")
    common.add_argument("--out", default=None, help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="idehmm", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "infer-params", "train-ide", "abc", "pipeline"):
        sub.add_parser(name, parents=[common])
    ps = sub.add_parser("predict-states", parents=[common])
    ps.add_argument("--method", required=True, choices=[m for m in METHODS if m != "abc"])
    return p


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    workers = args.workers if args.workers is not None else int(os.environ.get("IDEHMM_WORKERS", "1"))
    try:
        cfg = load_config(args.config, args.seed, args.out)
    except (UsageError, TypeError, ValueError) as err:
        parser.error(str(err))
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "simulate":
            _timed(cfg, "simulate", stage_simulate, workers)
        elif args.command == "infer-params":
            _timed(cfg, "infer-params", stage_infer_params, workers)
        elif args.command == "train-ide":
            _timed(cfg, "train-ide", stage_train_ide, workers)
        elif args.command == "predict-states":
            _timed(cfg, f"predict-{args.method}", stage_predict, args.method, workers)
        elif args.command == "abc":
            _timed(cfg, "abc", stage_abc, workers)
        else:
            out = _timed(cfg, "pipeline", stage_pipeline, workers)
            if out["all_failed"]:
                print("every dataset failed; see failures.json", file=sys.stderr)
                return 1
    except UsageError as err:
        parser.error(str(err))
    except (FileNotFoundError, RuntimeError, ArithmeticError) as err:
        print(f"idehmm: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
