"""Experiment orchestration: data generation, batch fitting, evaluation, reporting."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve

from .control import (DEFAULT_ORDER, FourierValueFn, SarsaConfig, default_sarsa,
                      plan_then_act, sarsa_run)
from .data import InstanceBatch, read_trajectories, write_trajectories
from .envs import make_domain, parameter_grid, training_settings
from .errors import ConfigError, InvalidInputError
from .filtering import filter_update, init_belief, mean_weights
from .gibbs import GibbsConfig, average_model, run_gibbs, write_diagnostics
from .gp import (PooledMean, fit_all_hyperparams, kernel_matrix, project_batch, select_support_points,
                 train_factor)
from .model import LatentDynamicsModel, predict_delta, save_model

try:                                    # Python >= 3.11
    import tomllib
except ModuleNotFoundError:             # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

METHODS = ("instance_only_gp", "pooled_gp", "pooled_plus_instance_gp", "ibp_gp")
DESK_GIBBS = dict(iterations=100, chains=3)
PAPER_SCALE = {"cartpole": dict(support_size=750), "acrobot": dict(support_size=1000)}


@dataclass
class ExperimentConfig:
    domain: str = "cartpole"
    training: list | None = None             # parameter settings; default: published list
    eval_grid: list | None = None            # default: full grid minus training settings
    support_size: int = 200
    gibbs: GibbsConfig = field(default_factory=lambda: GibbsConfig(**DESK_GIBBS))
    sarsa: SarsaConfig | None = None         # default: per-domain values
    fourier_order: int | None = None
    data_episodes: int = 30
    data_repetitions: int = 5
    points_per_instance: int = 50
    test_points: int = 50
    regression_settings: int = 3
    regression_runs: int = 5
    control_settings: int = 4
    control_trials: int = 10
    control_episodes: int = 20
    planning_episodes: int = 5
    initial_planning: int = 50
    hyper_max_points: int = 200
    projection_max_points: int = 300
    pooled_max_points: int = 200             # per (instance, action) in the pooled GP baselines
    pooled_projection: bool = True           # project batches around the pooled fit
    noise_floor: float = 1e-6
    workers: int = 1
    output_dir: str = "runs"

    def __post_init__(self):
        if self.domain not in ("cartpole", "acrobot"):
            raise ConfigError(f"domain must be 'cartpole' or 'acrobot', got {self.domain!r}")
        if isinstance(self.gibbs, dict):
            self.gibbs = GibbsConfig(**{**DESK_GIBBS, **self.gibbs})
        if self.sarsa is None:
            self.sarsa = default_sarsa(self.domain)
        elif isinstance(self.sarsa, dict):
            self.sarsa = SarsaConfig(**{**dataclasses.asdict(default_sarsa(self.domain)),
                                        **self.sarsa})
        if self.fourier_order is None:
            self.fourier_order = DEFAULT_ORDER[self.domain]
        grid = set(parameter_grid(self.domain))
        if self.training is None:
            self.training = training_settings(self.domain)
        self.training = [tuple(float(v) for v in s) for s in self.training]
        if not all(s in grid for s in self.training):
            raise ConfigError(f"training settings must come from the {self.domain} grid")
        if self.eval_grid is None:
            held = [s for s in parameter_grid(self.domain) if s not in set(self.training)]
            self.eval_grid = held or parameter_grid(self.domain)
        self.eval_grid = [tuple(float(v) for v in s) for s in self.eval_grid]
        if not self.eval_grid or not all(s in grid for s in self.eval_grid):
            raise ConfigError("evaluation grid must be a non-empty subset of the domain grid")
        if self.support_size < 1:
            raise ConfigError("support_size must be >= 1")
        for name in ("data_episodes", "data_repetitions", "points_per_instance", "test_points",
                     "regression_runs", "control_trials", "control_episodes", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["training"] = [list(s) for s in self.training]
        d["eval_grid"] = [list(s) for s in self.eval_grid]
        return d

    def config_hash(self):
        """Stable digest of every setting that influences results."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def paper_scale(self):
        """Copy with the published experiment sizes."""
        gibbs = dataclasses.replace(self.gibbs, iterations=250, chains=5)
        return dataclasses.replace(self, gibbs=gibbs, control_trials=30,
                                   **PAPER_SCALE[self.domain])

    def domain_for(self, setting):
        return make_domain(self.domain, setting)


def _coerce(value, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, str):
        return value
    return json.loads(value)


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key=value`` strings (``gibbs.iterations=50``) to a config mapping."""
    doc = json.loads(json.dumps(doc))
    defaults = ExperimentConfig(domain=doc.get("domain", "cartpole")).to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        ref, dref = doc, defaults
        for p in parts[:-1]:
            ref = ref.setdefault(p, {})
            dref = dref.get(p, {}) if isinstance(dref, dict) else {}
        if parts[-1] not in dref:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            ref[parts[-1]] = _coerce(value, dref[parts[-1]])
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return doc


def config_from_dict(doc) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**doc)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides=None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(apply_overrides(doc, overrides))


# --- data generation ---------------------------------------------------------

def collect_instance(cfg: ExperimentConfig, setting, instance_id, rng,
                     repetitions=None, episodes=None) -> InstanceBatch:
    """Sarsa data collection on the true simulator: fresh learner per repetition."""
    domain = cfg.domain_for(setting)
    states, actions, nexts, rewards, eps = [], [], [], [], []
    ep = 0
    for _ in range(cfg.data_repetitions if repetitions is None else repetitions):
        fn = FourierValueFn.for_domain(domain, cfg.fourier_order)
        res = sarsa_run(domain, fn, cfg.sarsa, rng,
                        episodes=cfg.data_episodes if episodes is None else episodes,
                        record=True)
        for trans in res.episodes:
            for t in trans:
                states.append(t.s)
                actions.append(t.a)
                nexts.append(t.s_next)
                rewards.append(t.r)
                eps.append(ep)
            ep += 1
    return InstanceBatch(instance_id, np.array(states), np.array(actions, dtype=np.int64),
                         np.array(nexts), np.array(rewards), domain.true_params(),
                         np.array(eps, dtype=np.int64))


def generate_batches(cfg: ExperimentConfig, seed):
    return [collect_instance(cfg, s, b, np.random.default_rng([seed, b]))
            for b, s in enumerate(cfg.training)]


def gen_data(cfg: ExperimentConfig, seed, out_dir):
    """Write one trajectory CSV per training setting plus an ``instances.json`` manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    domain = cfg.domain_for(None)
    manifest = {"config_hash": cfg.config_hash(), "seed": seed, "domain": cfg.domain,
                "instances": []}
    paths = []
    for batch in generate_batches(cfg, seed):
        path = out / f"instance_{batch.instance_id:02d}.csv"
        write_trajectories(path, batch, domain.state_names)
        manifest["instances"].append({"file": path.name, "instance_id": batch.instance_id,
                                      "true_params": batch.true_params,
                                      "n_transitions": len(batch)})
        paths.append(path)
    (out / "instances.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                        encoding="utf-8")
    log.info("wrote %d trajectory files to %s", len(paths), out)
    return paths


def load_batches(data_dir):
    data_dir = Path(data_dir)
    manifest_path = data_dir / "instances.json"
    if not manifest_path.is_file():
        raise ConfigError(f"no instances.json in {data_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    return [read_trajectories(data_dir / e["file"], e.get("true_params"))
            for e in manifest["instances"]]


# --- batch fitting -------------------------------------------------------------

def pool_batches(batches, instance_id=-1):
    return InstanceBatch(instance_id, np.vstack([b.states for b in batches]),
                         np.concatenate([b.actions for b in batches]),
                         np.vstack([b.next_states for b in batches]),
                         np.concatenate([b.rewards for b in batches]))


@dataclass
class FitResult:
    model: LatentDynamicsModel
    average: LatentDynamicsModel
    gibbs: object
    support: object
    projected: list


def fit_model(cfg: ExperimentConfig, batches, seed) -> FitResult:
    """Hyperparameters, support selection, projection, then the Gibbs sampler."""
    if len(batches) == 0:
        raise InvalidInputError("no training batches")
    if len(batches) < 2:
        raise InvalidInputError("need at least two training batches")
    domain = cfg.domain_for(None)
    pooled = pool_batches(batches)
    params = fit_all_hyperparams(pooled, domain.actions, seed=seed,
                                 max_points=cfg.hyper_max_points, wrap_dims=domain.wrap_dims,
                                 noise_floor=cfg.noise_floor)
    support = select_support_points(batches, cfg.support_size, params, domain.actions,
                                    wrap_dims=domain.wrap_dims,
                                    max_points=cfg.projection_max_points, seed=seed)
    prior = PooledMean(batches, support, max_points=cfg.projection_max_points, seed=seed) \
        if cfg.pooled_projection else None
    projected = [project_batch(b, support, max_points=cfg.projection_max_points, seed=seed,
                               index=i, prior=prior) for i, b in enumerate(batches)]
    gcfg = dataclasses.replace(cfg.gibbs, seed=seed)
    result = run_gibbs(projected, support, gcfg)
    meta = {"config_hash": cfg.config_hash(), "seed": seed, "domain": cfg.domain,
            "train_weights": {str(k): [float(x) for x in v]
                              for k, v in result.train_weights.items()},
            "true_params": {str(b.instance_id): b.true_params for b in batches}}
    model = dataclasses.replace(result.model, meta=meta)
    avg = average_model(projected, support, gcfg)
    return FitResult(model, avg, result, support, projected)


def weight_correlations(train_weights, batches):
    """Rows (feature k, parameter, pearson r) across training instances."""
    params = [b.true_params for b in batches]
    if not params or any(p is None for p in params):
        return []
    W = np.array([train_weights[b.instance_id] for b in batches])
    rows = []
    for k in range(1, W.shape[1]):
        for name in params[0]:
            x = np.array([p[name] for p in params], dtype=np.float64)
            y = W[:, k]
            if x.std() == 0 or y.std() == 0:
                r = float("nan")
            else:
                r = float(np.corrcoef(x, y)[0, 1])
            rows.append((k + 1, name, r))
    return rows


def average_path(model_path):
    """Where the average model is stored next to ``model_path``."""
    model_path = Path(model_path)
    return model_path.with_name(model_path.stem + "_average" + (model_path.suffix or ".hipmdp"))


def write_fit_outputs(cfg, fit: FitResult, batches, seed, model_path):
    """Save the model plus diagnostics and weight-vs-parameter CSVs beside it."""
    model_path = Path(model_path)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(fit.model, model_path)
    save_model(fit.average, average_path(model_path))
    tag = {"config_hash": cfg.config_hash(), "seed": seed}
    write_diagnostics(model_path.with_name(model_path.stem + "_diagnostics.csv"),
                      fit.gibbs.diagnostics, tag)
    with open(model_path.with_name(model_path.stem + "_weights.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = list(batches[0].true_params or {})
        K = fit.model.K
        w.writerow(["instance_id", *names, *[f"w{k + 1}" for k in range(K)],
                    "config_hash", "seed"])
        for b in batches:
            tp = b.true_params or {}
            w.writerow([b.instance_id, *[repr(float(tp[n])) for n in names],
                        *[repr(float(v)) for v in fit.gibbs.train_weights[b.instance_id]],
                        tag["config_hash"], seed])
    with open(model_path.with_name(model_path.stem + "_correlations.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "parameter", "pearson_r", "config_hash", "seed"])
        for k, name, r in weight_correlations(fit.gibbs.train_weights, batches):
            w.writerow([k, name, repr(r), tag["config_hash"], seed])


# --- regression evaluation -----------------------------------------------------

class _GP:
    """Exact GP per (action, output) with fixed kernels, for the baselines."""

    def __init__(self, support, X, A, Y, params=None):
        self.support = support
        self.fits = {}
        for a in support.actions:
            mask = A == a
            for j in range(support.dim):
                p = support.kernel(a, j) if params is None else params[(a, j)]
                if mask.any():
                    cf = train_factor(X[mask], p)
                    self.fits[(a, j)] = (X[mask], cf, cho_solve(cf, Y[mask, j],
                                                                check_finite=False), p)
                else:
                    self.fits[(a, j)] = (None, None, None, p)

    def kernel(self, a, j):
        return self.fits[(a, j)][3]

    def predict(self, X, A):
        n, d = X.shape
        mean = np.zeros((n, d))
        var = np.zeros((n, d))
        for a in self.support.actions:
            rows = np.flatnonzero(A == a)
            if not len(rows):
                continue
            for j in range(d):
                Xt, cf, alpha, p = self.fits[(a, j)]
                if Xt is None:
                    var[rows, j] = p.signal_variance + p.noise_variance
                    continue
                Ks = kernel_matrix(X[rows], Xt, p)
                mean[rows, j] = Ks @ alpha
                v = cho_solve(cf, Ks.T, check_finite=False)
                latent = np.maximum(p.signal_variance - np.sum(Ks * v.T, axis=1), 0.0)
                var[rows, j] = latent + p.noise_variance
        return mean, var


def _gauss_logpdf(y, mean, var):
    return -0.5 * (np.log(2 * math.pi * var) + (y - mean) ** 2 / var)


def sample_points(batch: InstanceBatch, n, rng):
    """Uniform subset of ``n`` distinct tuples (duplicates rejected)."""
    key = np.hstack([batch.states, batch.actions[:, None], batch.next_states])
    _, first = np.unique(key, axis=0, return_index=True)
    if len(first) < n:
        raise InvalidInputError(f"only {len(first)} distinct tuples; need {n}")
    return batch.subset(np.sort(rng.choice(np.sort(first), size=n, replace=False)))


@dataclass
class RegressionReport:
    rows: list            # per (setting, run, method, dim): mse
    loglik: list          # per (setting, run, method): mean per-point loglik difference vs ibp_gp
    state_names: tuple

    def summary(self):
        """{(method, dim): (mean mse, 95% half-width, n)}."""
        out = {}
        for method in METHODS:
            for j in range(len(self.state_names)):
                vals = np.array([r["mse"] for r in self.rows
                                 if r["method"] == method and r["dim"] == j])
                half = 1.96 * vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
                out[(method, j)] = (float(vals.mean()), float(half), len(vals))
        return out


def eval_regression(cfg: ExperimentConfig, model: LatentDynamicsModel, batches, seed,
                    settings=None) -> RegressionReport:
    """Compare the four regression methods on held-out settings with shared splits."""
    domain = cfg.domain_for(None)
    wrap = domain.wrap_dims
    support = model.support
    if settings is None:
        grid = cfg.eval_grid
        rng = np.random.default_rng([seed, 7])
        n = min(cfg.regression_settings, len(grid))
        settings = [grid[i] for i in sorted(rng.choice(len(grid), size=n, replace=False))]
    pool_rng = np.random.default_rng([seed, 11])
    px, pa, py = [], [], []
    for b in batches:
        for a in domain.actions:
            rows = np.flatnonzero(b.actions == a)
            if len(rows) > cfg.pooled_max_points:
                rows = np.sort(pool_rng.choice(rows, size=cfg.pooled_max_points, replace=False))
            px.append(b.states[rows])
            pa.append(b.actions[rows])
            py.append(b.deltas(wrap)[rows])
    PX, PA, PY = np.vstack(px), np.concatenate(pa), np.vstack(py)
    pooled = _GP(support, PX, PA, PY)
    rows, lls = [], []
    for si, setting in enumerate(settings):
        for run in range(cfg.regression_runs):
            rng = np.random.default_rng([seed, 1000 + si, run])
            # Train and test points come from independent Sarsa runs so that test
            # tuples are not temporal neighbours of training tuples.
            train_run = collect_instance(cfg, setting, 1000 + si, rng, repetitions=1)
            test_run = collect_instance(cfg, setting, 1000 + si, rng, repetitions=1)
            train = sample_points(train_run, cfg.points_per_instance, rng)
            test = sample_points(test_run, cfg.test_points, rng)
            ty = test.deltas(wrap)
            preds = {}
            # The instance-only GP learns everything, hyperparameters included,
            # from the instance's own training points.
            own = fit_all_hyperparams(train, domain.actions, seed=run, wrap_dims=wrap,
                                      noise_floor=cfg.noise_floor)
            preds["instance_only_gp"] = _GP(support, train.states, train.actions,
                                            train.deltas(wrap), own).predict(test.states,
                                                                             test.actions)
            preds["pooled_gp"] = pooled.predict(test.states, test.actions)
            both = _GP(support, np.vstack([PX, train.states]),
                       np.concatenate([PA, train.actions]),
                       np.vstack([PY, train.deltas(wrap)]))
            preds["pooled_plus_instance_gp"] = both.predict(test.states, test.actions)
            belief = filter_update(init_belief(model), model, train)
            w = mean_weights(belief).w
            mean = np.zeros_like(ty)
            var = np.zeros_like(ty)
            for i in range(len(test)):
                mean[i], var[i] = predict_delta(model, w, test.states[i], int(test.actions[i]))
            preds["ibp_gp"] = (mean, var)
            per_point = {}
            for method in METHODS:
                m_, v_ = preds[method]
                err = _wrapped_error(ty - m_, wrap)
                for j in range(ty.shape[1]):
                    rows.append(dict(setting=setting, run=run, method=method, dim=j,
                                     mse=float(np.mean(err[:, j] ** 2))))
                per_point[method] = _gauss_logpdf(err, 0.0, v_).sum(axis=1)
            for method in METHODS:
                lls.append(dict(setting=setting, run=run, method=method,
                                loglik_diff=float(np.mean(per_point[method]
                                                          - per_point["ibp_gp"]))))
    return RegressionReport(rows, lls, domain.state_names)


def _wrapped_error(err, wrap):
    """Prediction error with angular outputs mapped to the shortest signed arc."""
    err = np.array(err)
    for j in wrap:
        err[:, j] = (err[:, j] + math.pi) % (2 * math.pi) - math.pi
    return err


def write_regression_report(path, report: RegressionReport, cfg, seed):
    tag = [cfg.config_hash(), seed]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "dimension", "mse", "ci95", "n_runs", "mean_loglik_diff_vs_ibp_gp",
                    "config_hash", "seed"])
        summary = report.summary()
        for method in METHODS:
            ll = np.mean([r["loglik_diff"] for r in report.loglik if r["method"] == method])
            for j, name in enumerate(report.state_names):
                mse, half, n = summary[(method, j)]
                w.writerow([method, name, repr(mse), repr(half), n, repr(float(ll)), *tag])
    runs_path = Path(path).with_name(Path(path).stem + "_runs.csv")
    with open(runs_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "run", "method", "dimension", "mse", "config_hash", "seed"])
        for r in report.rows:
            w.writerow([" ".join(map(repr, r["setting"])), r["run"], r["method"],
                        report.state_names[r["dim"]], repr(r["mse"]), *tag])


# --- control evaluation --------------------------------------------------------

AGENTS = ("true_model", "average_model", "hipmdp")


def _control_trial(args):
    cfg, model, avg, setting, si, trial, seed = args
    env = cfg.domain_for(setting)
    out = []
    for agent in AGENTS:
        rng = np.random.default_rng([seed, si, trial])
        fn = FourierValueFn.for_domain(env, cfg.fourier_order)
        planner = {"true_model": cfg.domain_for(setting), "average_model": avg,
                   "hipmdp": model}[agent]
        res = plan_then_act(planner, None, env, fn, cfg.sarsa, rng,
                            episodes=cfg.control_episodes,
                            planning_episodes=cfg.planning_episodes,
                            initial_planning=cfg.initial_planning)
        for ep, (ret, steps) in enumerate(zip(res.returns, res.steps)):
            out.append(dict(trial=trial, instance_id=si, episode=ep + 1, ret=ret,
                            steps=steps, agent=agent))
    return out


def control_settings(cfg: ExperimentConfig, seed):
    grid = cfg.eval_grid
    n = min(cfg.control_settings, len(grid))
    rng = np.random.default_rng([seed, 13])
    return [grid[i] for i in sorted(rng.choice(len(grid), size=n, replace=False))]


def eval_control(cfg: ExperimentConfig, model, avg, seed, settings=None):
    """Learning curves for the three agents; one row per (trial, setting, episode, agent)."""
    settings = control_settings(cfg, seed) if settings is None else settings
    jobs = [(cfg, model, avg, s, si, t, seed) for si, s in enumerate(settings)
            for t in range(cfg.control_trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_control_trial, jobs))
    else:
        parts = [_control_trial(j) for j in jobs]
    return [r for p in parts for r in p]


def write_learning_curves(path, rows, cfg, seed):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "instance_id", "episode", "return", "steps", "agent",
                    "config_hash", "seed"])
        for r in rows:
            w.writerow([r["trial"], r["instance_id"], r["episode"], repr(float(r["ret"])),
                        r["steps"], r["agent"], cfg.config_hash(), seed])


def mean_curves(rows):
    """{agent: per-episode mean return over settings and trials}."""
    out = {}
    for agent in AGENTS:
        eps = sorted({r["episode"] for r in rows if r["agent"] == agent})
        out[agent] = np.array([np.mean([r["ret"] for r in rows
                                        if r["agent"] == agent and r["episode"] == e])
                               for e in eps])
    return out


def episodes_to_threshold(rows, floor, frac=0.8, tail=5):
    """Median (over setting x trial) first episode whose return reaches the threshold.

    The threshold sits ``frac`` of the way from ``floor`` (worst possible
    return) to the true-model agent's asymptotic return, taken as the mean of
    its last ``tail`` episodes.  Trials that never reach it count as
    ``n_episodes + 1``.
    """
    curves = mean_curves(rows)
    asym = float(np.mean(curves["true_model"][-tail:]))
    threshold = floor + frac * (asym - floor)
    n_eps = max(r["episode"] for r in rows)
    med = {}
    for agent in AGENTS:
        firsts = []
        keys = sorted({(r["instance_id"], r["trial"]) for r in rows if r["agent"] == agent})
        for key in keys:
            rets = sorted((r["episode"], r["ret"]) for r in rows
                          if r["agent"] == agent and (r["instance_id"], r["trial"]) == key)
            hit = [e for e, ret in rets if ret >= threshold]
            firsts.append(hit[0] if hit else n_eps + 1)
        med[agent] = float(np.median(firsts))
    return med, threshold, asym

