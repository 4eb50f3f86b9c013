"""Seeded experiment runs and the learning-curve metrics.

A run trains one agent per seed, evaluating every ``eval_interval`` steps
(and once before training). Control agents are scored by undiscounted
evaluation return under greedy actions. Policy-evaluation agents have no
return of their own; they are scored by ``-MSVE`` against the exact value
function so that larger is better for every curve.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import AGENT_KINDS, HfpsConfig, make_agent
from .envs import (HoldLastSpec, NoiseSpec, RandomFeatureSpec, RingSpec, StickySpec, TabularEnv,
                   make_pointmass, make_random_feature_mdp, make_ring, wrap_hold_last, wrap_noisy,
                   wrap_sticky)
from .errors import ContractError, DivergenceError
from .io import mdp_from_dict
from .mdp import exact_occupancy, exact_value, uniform_distribution, uniform_policy

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    env: dict
    agent: str
    total_steps: int
    eval_interval: int
    seeds: list
    agent_config: dict = field(default_factory=dict)
    wrappers: list = field(default_factory=list)
    eval_episodes: int = 5
    regime: str | None = None

    def __post_init__(self):
        if self.total_steps < 0:
            raise ContractError("total_steps must be non-negative")
        if self.eval_interval <= 0:
            raise ContractError("eval_interval must be positive")
        if self.total_steps % self.eval_interval:
            raise ContractError("eval_interval must divide total_steps")
        if not self.seeds:
            raise ContractError("at least one seed is required")
        if self.agent not in AGENT_KINDS:
            raise ContractError(f"unknown agent kind {self.agent!r}; known: {sorted(AGENT_KINDS)}")
        if "kind" not in self.env:
            raise ContractError("env section needs a 'kind'")
        if self.regime is None:
            self.regime = "+".join(_REGIME_NAMES[w["kind"]] for w in self.wrappers) or "clean"

    @property
    def env_name(self) -> str:
        return self.env["kind"]

    def hfps_config(self) -> HfpsConfig:
        return _construct(HfpsConfig, self.agent_config, "agent_config")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {"env", "agent", "total_steps", "eval_interval", "seeds", "agent_config", "wrappers",
                 "eval_episodes", "regime"}
        unknown = set(doc) - known
        if unknown:
            raise ContractError(f"unknown run config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ContractError(str(exc)) from exc


def _construct(cls, kwargs, what):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ContractError(f"bad {what}: {exc}") from None


_REGIME_NAMES = {"hold_last": "nonmarkov", "noisy": "noisy", "sticky": "sticky"}


@dataclass
class EnvBundle:
    env: object
    features: np.ndarray
    r_max: float
    mdp: object = None
    policy: np.ndarray = None
    true_value: np.ndarray = None
    nu: np.ndarray = None


def build_env(env_spec: dict, wrappers=(), seed: int = 0) -> EnvBundle:
    spec = dict(env_spec)
    kind = spec.pop("kind")
    if kind == "ring":
        env, mdp, _ = make_ring(_construct(RingSpec, spec, "ring spec"))
        bundle = EnvBundle(env, np.eye(mdp.n_states), mdp.r_max, mdp=mdp)
    elif kind == "pointmass":
        env = _construct(make_pointmass, spec, "pointmass spec")
        bundle = EnvBundle(env, np.eye(env.n_states), abs(env.step_penalty))
    elif kind == "random_feature":
        rf = _construct(RandomFeatureSpec, spec, "random_feature spec")
        mdp, phi = make_random_feature_mdp(rf)
        policy = uniform_policy(mdp)
        env = TabularEnv(mdp, rf.horizon, discount_restarts=True)
        occ = exact_occupancy(mdp, policy, uniform_distribution(mdp.n_states))
        bundle = EnvBundle(env, phi, mdp.r_max, mdp=mdp, policy=policy,
                           true_value=exact_value(mdp, policy), nu=occ.nu)
    elif kind == "tabular":
        try:
            mdp = mdp_from_dict(spec.pop("mdp"))
        except KeyError:
            raise ContractError("tabular env needs an 'mdp' document") from None
        env = _construct(lambda **kw: TabularEnv(mdp, **kw), spec, "tabular env spec")
        bundle = EnvBundle(env, np.eye(mdp.n_states), mdp.r_max, mdp=mdp)
    else:
        raise ContractError(f"unknown env kind {kind!r}")
    for w in wrappers:
        w = dict(w)
        wkind = w.pop("kind")
        if wkind == "hold_last":
            bundle.env = wrap_hold_last(bundle.env, _construct(HoldLastSpec, w, "hold_last spec"))
        elif wkind == "noisy":
            bundle.env = wrap_noisy(bundle.env, _construct(NoiseSpec, {"rng_seed": seed, **w}, "noisy spec"))
        elif wkind == "sticky":
            bundle.env = wrap_sticky(bundle.env, _construct(StickySpec, {"rng_seed": seed, **w}, "sticky spec"))
        else:
            raise ContractError(f"unknown wrapper kind {wkind!r}")
    return bundle


def msve(v_learned, v_exact, nu) -> float:
    """``sum_s nu(s) (V_learned(s) - V_exact(s))^2``."""
    v_learned, v_exact, nu = (np.asarray(x, dtype=float) for x in (v_learned, v_exact, nu))
    if not v_learned.shape == v_exact.shape == nu.shape:
        raise ContractError("msve inputs must share one state set")
    return float(np.sum(nu * (v_learned - v_exact) ** 2))


def _episode_seed(seed, *path):
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def _evaluate(cfg: RunConfig, agent, seed: int, eval_index: int, bundle: EnvBundle) -> float:
    if not agent.control:
        return -msve(agent.state.values(), bundle.true_value, bundle.nu)
    env = build_env(cfg.env, cfg.wrappers, seed).env
    total = 0.0
    for ep in range(cfg.eval_episodes):
        obs = env.reset(_episode_seed(seed, 2, eval_index, ep))
        done = trunc = False
        while not (done or trunc):
            obs, r, done, trunc = env.step(agent.act(obs, evaluate=True))
            total += r
    return total / cfg.eval_episodes


def run_single(cfg: RunConfig, seed: int) -> dict:
    """Train and evaluate one seed; divergence ends the run early."""
    bundle = build_env(cfg.env, cfg.wrappers, seed)
    env = bundle.env
    hcfg = cfg.hfps_config()
    if bundle.mdp is not None and "gamma" not in cfg.agent_config:
        hcfg = replace(hcfg, gamma=bundle.mdp.discount)
    agent = make_agent(cfg.agent, bundle.features, env.n_actions, hcfg, seed=seed,
                       r_max=bundle.r_max, behavior_policy=bundle.policy)
    if not agent.control and bundle.true_value is None:
        raise ContractError(f"agent {cfg.agent!r} needs an environment with a known value function")
    steps, returns, residual = [0], [_evaluate(cfg, agent, seed, 0, bundle)], [np.nan]
    episode = 0
    obs = env.reset(_episode_seed(seed, 1, episode))
    res_acc = []
    failed_at = None
    for t in range(cfg.total_steps):
        agent.progress = t / cfg.total_steps
        a = agent.act(obs)
        obs2, r, done, trunc = env.step(a)
        agent.store_transition(obs, a, r, obs2, done, trunc)
        try:
            report = agent.update()
        except DivergenceError:
            failed_at = t
            log.warning("seed %s diverged at step %s", seed, t)
            break
        if report is not None and agent.residual_indicator() is not None:
            res_acc.append(agent.residual_indicator())
        obs = obs2
        if done or trunc:
            episode += 1
            obs = env.reset(_episode_seed(seed, 1, episode))
        if (t + 1) % cfg.eval_interval == 0:
            steps.append(t + 1)
            returns.append(_evaluate(cfg, agent, seed, len(steps) - 1, bundle))
            residual.append(float(np.mean(res_acc)) if res_acc else np.nan)
            res_acc = []
    return {"seed": seed, "steps": steps, "returns": returns, "residual": residual, "failed_at": failed_at}


@dataclass
class MetricSeries:
    """Evaluation curves of one (env, regime, agent) triple across seeds.

    ``returns`` and ``residual`` have shape ``(n_seeds, n_points)``; failed
    seeds are listed in ``failed`` and left out of ``ok_returns``.
    """

    steps: np.ndarray
    returns: np.ndarray
    seeds: list
    residual: np.ndarray = None
    failed: dict = field(default_factory=dict)
    env: str = ""
    regime: str = ""
    agent: str = ""

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=float)
        self.returns = np.atleast_2d(np.asarray(self.returns, dtype=float))
        if self.residual is None:
            self.residual = np.full_like(self.returns, np.nan)
        self.residual = np.atleast_2d(np.asarray(self.residual, dtype=float))
        if self.steps.ndim != 1 or np.any(np.diff(self.steps) <= 0):
            raise ContractError("evaluation steps must be strictly increasing")
        if self.returns.shape != (len(self.seeds), self.steps.shape[0]):
            raise ContractError("returns must have one value per (seed, eval point)")
        if self.residual.shape != self.returns.shape:
            raise ContractError("residual indicator must match the returns shape")

    @property
    def ok_returns(self) -> np.ndarray:
        keep = [i for i, s in enumerate(self.seeds) if s not in self.failed]
        return self.returns[keep]


def _parallelism(n_seeds: int) -> int:
    try:
        cap = int(os.environ.get("HODGEFLOW_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_seeds))


def run_experiment(cfg: RunConfig) -> MetricSeries:
    workers = _parallelism(len(cfg.seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run_single, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        runs = [run_single(cfg, seed) for seed in cfg.seeds]
    n_points = cfg.total_steps // cfg.eval_interval + 1
    steps = np.arange(n_points) * cfg.eval_interval
    returns = np.full((len(runs), n_points), np.nan)
    residual = np.full((len(runs), n_points), np.nan)
    failed = {}
    for i, run in enumerate(runs):
        k = len(run["returns"])
        returns[i, :k] = run["returns"]
        residual[i, :k] = run["residual"]
        if run["failed_at"] is not None:
            failed[run["seed"]] = run["failed_at"]
    return MetricSeries(steps, returns, list(cfg.seeds), residual, failed,
                        env=cfg.env_name, regime=cfg.regime, agent=cfg.agent)


def _curve_args(series_or_steps, returns=None):
    if isinstance(series_or_steps, MetricSeries):
        return series_or_steps.steps, series_or_steps.ok_returns
    return np.asarray(series_or_steps, dtype=float), np.atleast_2d(np.asarray(returns, dtype=float))


def _aggregate(values):
    values = np.asarray(values, dtype=float)
    return values, float(np.mean(values)), float(np.std(values))


def cauc(series_or_steps, returns=None) -> np.ndarray:
    """Cumulative trapezoid area, one row per seed, entries for ``t_2 .. t_K``."""
    t, R = _curve_args(series_or_steps, returns)
    if t.shape[0] < 2:
        raise ContractError("need at least two evaluation points")
    pieces = 0.5 * (R[:, 1:] + R[:, :-1]) * np.diff(t)
    return np.cumsum(pieces, axis=1)


def auc_at_t(series_or_steps, returns=None):
    """Trapezoidal area under each seed's curve: ``(per_seed, mean, std)``."""
    return _aggregate(cauc(series_or_steps, returns)[:, -1])


def final_at_t(series_or_steps, returns=None):
    """Last evaluation return aggregated over seeds: ``(per_seed, mean, std)``."""
    _, R = _curve_args(series_or_steps, returns)
    return _aggregate(R[:, -1])


def cross_seed_std(series_or_steps, returns=None) -> np.ndarray:
    """Population standard deviation across seeds at every evaluation point."""
    _, R = _curve_args(series_or_steps, returns)
    if R.shape[0] < 2:
        raise ContractError("need at least two seeds")
    return np.std(R, axis=0)


def roughness(curve, window: int = 5) -> float:
    """Variance of a curve around its centred moving average."""
    curve = np.asarray(curve, dtype=float)
    kernel = np.ones(window) / window
    smooth = np.convolve(curve, kernel, mode="valid")
    half = window // 2
    return float(np.var(curve[half: half + smooth.shape[0]] - smooth))


def metrics_filename(series: MetricSeries) -> str:
    return f"{series.env}__{series.regime}__{series.agent}.csv"


def write_metrics(series: MetricSeries, path) -> None:
    """Columns: step, seed, return, residual_indicator (empty when not logged)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "seed", "return", "residual_indicator"])
        for i, seed in enumerate(series.seeds):
            for k, step in enumerate(series.steps):
                ret, res = series.returns[i, k], series.residual[i, k]
                if np.isnan(ret):
                    continue
                w.writerow([int(step), seed, repr(float(ret)), "" if np.isnan(res) else repr(float(res))])


def read_metrics(path) -> MetricSeries:
    path = Path(path)
    rows = list(csv.DictReader(open(path, newline="")))
    if not rows:
        raise ContractError(f"{path} has no rows")
    steps = sorted({int(r["step"]) for r in rows})
    seeds = sorted({int(r["seed"]) for r in rows})
    returns = np.full((len(seeds), len(steps)), np.nan)
    residual = np.full_like(returns, np.nan)
    si, ki = {s: i for i, s in enumerate(seeds)}, {t: k for k, t in enumerate(steps)}
    for r in rows:
        i, k = si[int(r["seed"])], ki[int(r["step"])]
        returns[i, k] = float(r["return"])
        if r["residual_indicator"]:
            residual[i, k] = float(r["residual_indicator"])
    failed = {seeds[i]: None for i in range(len(seeds)) if np.isnan(returns[i]).any()}
    env, regime, agent = (path.stem.split("__") + ["", "", ""])[:3]
    return MetricSeries(steps, returns, seeds, residual, failed, env=env, regime=regime, agent=agent)


def summarize(series: MetricSeries) -> dict:
    ok = series.ok_returns
    out = {"env": series.env, "regime": series.regime, "agent": series.agent,
           "n_seeds": int(ok.shape[0]), "n_failed": len(series.failed)}
    if ok.shape[0]:
        _, out["auc_mean"], out["auc_std"] = auc_at_t(series)
        _, out["final_mean"], out["final_std"] = final_at_t(series)
    return out


def write_summary(series_list, path) -> None:
    doc = [summarize(s) for s in series_list]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
