"""Experiment matrix: scheme baselines, generalization sweeps, ablations and heatmaps.

Every experiment is a pure function of an :class:`ExperimentConfig` (and,
for reinforcement-learning schemes, a checkpoint), so reruns with the same
config and seed reproduce their outputs byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .environment import EnvConfig, ReflectorEnv, RolloutLog
from .marl import Hyperparameters, MappoModel, TrainResult, train
from .raytracer import GridSpec, rssi_heatmap, write_heatmap_csv, write_heatmap_pgm
from .scene import SceneConfig, scene_config_from_mapping
from .vectormath import ContractError

SCHEMES = ("none", "flat", "sa_focus", "col_ma", "ma_focus")
RL_MODES = {"sa_focus": "single_agent", "col_ma": "column_ma", "ma_focus": "multi_agent"}
TILES_FOR_SCHEME = {"none": "absent", "flat": "flat"}


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: str = "ma_focus"
    users: int = 3
    agents: int = 3
    rows: int = 5
    cols: int = 5
    grouping: str = "columns"
    reward_mode: str = "mean"
    reward_n: int = 2
    noise_sigma: float = 0.0
    seed: int = 0
    episodes: int = 300
    eval_steps: int = 100
    eval_runs: int = 3
    episode_length: int = 20
    delta_max: float = 0.5
    heatmap_step: float = 0.25
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ContractError(f"unknown scheme {self.scheme!r}")
        if self.grouping not in ("columns", "shifted"):
            raise ContractError(f"unknown grouping {self.grouping!r}")
        if self.reward_mode not in ("mean", "dist_norm"):
            raise ContractError(f"unknown reward mode {self.reward_mode!r}")
        if self.eval_steps < 1 or self.eval_runs < 1:
            raise ContractError("eval_steps and eval_runs must be positive")
        if self.users < 1 or self.agents < 1 or self.rows < 1 or self.cols < 1:
            raise ContractError("users, agents, rows and cols must be positive")

    @classmethod
    def full_scale(cls, **overrides) -> "ExperimentConfig":
        """The published array size and budgets: 7x9 tiles, 3000 episodes, 300 eval steps."""
        return cls(**{"rows": 7, "cols": 9, "episodes": 3000, "eval_steps": 300, **overrides})

    @property
    def mode(self) -> str | None:
        return RL_MODES.get(self.scheme)

    def scene_config(self) -> SceneConfig:
        return replace(self.scene, reflector_rows=self.rows, reflector_cols=self.cols)

    def env_config(self, evaluation: bool) -> EnvConfig:
        return EnvConfig(
            n_users=self.users, n_agents=self.agents, grouping=self.grouping,
            control_mode="column_azimuth" if self.scheme == "col_ma" else "per_tile",
            tiles=TILES_FOR_SCHEME.get(self.scheme, "controlled"), reward_mode=self.reward_mode,
            reward_n=self.reward_n, noise_sigma=self.noise_sigma,
            episode_length=self.eval_steps if evaluation else self.episode_length,
            mobility=evaluation, delta_max=self.delta_max)

    def make_env(self, evaluation: bool = False) -> ReflectorEnv:
        return ReflectorEnv(self.scene_config(), self.env_config(evaluation))

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(episodes=self.episodes)

    def eval_seeds(self) -> list[list[int]]:
        # Three-element entropy lists never collide with the two-element training seeds.
        return [[self.seed, 0xE7A1, i] for i in range(self.eval_runs)]


def _convert(value: str, kind):
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    return value


def load_experiment_config(path=None, base: ExperimentConfig | None = None, **overrides) -> ExperimentConfig:
    """Read an INI file with optional ``[scene]`` and ``[experiment]`` sections.

    Precedence, lowest first: ``base`` (default profile), the file, then
    non-``None`` keyword overrides.
    """
    base = base or ExperimentConfig()
    scene = base.scene
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        unknown = set(parser.sections()) - {"scene", "experiment"}
        if unknown:
            raise ContractError(f"unknown config sections {sorted(unknown)}")
        if parser.has_section("scene"):
            scene = scene_config_from_mapping(dict(parser.items("scene")))
        if parser.has_section("experiment"):
            types = {f.name: f.type for f in fields(ExperimentConfig) if f.name != "scene"}
            for key, raw in parser.items("experiment"):
                if key not in types:
                    raise ContractError(f"unknown experiment key {key!r}")
                values[key] = _convert(raw, types[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return replace(base, scene=scene, **values)


# -- evaluation -------------------------------------------------------------

@dataclass
class EvalReport:
    """Per-step per-user RSSI over one or more mobility runs.

    ``moved[r, t]`` marks that users were resampled right after step ``t``
    of run ``r`` (the step's RSSI was measured before the move).
    """

    scheme: str
    rssi: np.ndarray  # (runs, steps, users) dBm
    moved: np.ndarray  # (runs, steps) bool
    label: str = ""

    @property
    def step_means(self) -> np.ndarray:
        return self.rssi.mean(axis=2)

    @property
    def mean_dbm(self) -> float:
        return float(self.step_means.mean())

    @property
    def std_dbm(self) -> float:
        return float(self.step_means.std())

    def summary(self) -> dict:
        try:
            recovery = adaptation_stats(self)["mean_recovery_steps"]
        except ContractError:
            recovery = None
        return {"scheme": self.scheme, "mean_dbm": self.mean_dbm, "std_dbm": self.std_dbm,
                "recovery_steps": recovery}

    def write_trace_csv(self, path) -> None:
        k = self.rssi.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "step"] + [f"rssi_{i}" for i in range(k)] + ["mean_dbm", "moved"])
            for r in range(self.rssi.shape[0]):
                for t in range(self.rssi.shape[1]):
                    w.writerow([r, t] + [f"{v:.6f}" for v in self.rssi[r, t]]
                               + [f"{self.step_means[r, t]:.6f}", int(self.moved[r, t])])


def evaluate(cfg: ExperimentConfig, model: MappoModel | None = None, log: RolloutLog | None = None) -> EvalReport:
    """Decentralized deterministic execution over ``cfg.eval_runs`` mobility runs.

    Actors act on their local observations only; the critic is unused.
    """
    if cfg.mode is not None and model is None:
        raise ContractError(f"scheme {cfg.scheme!r} needs a trained model")
    all_rssi, all_moved = [], []
    for run, seed in enumerate(cfg.eval_seeds()):
        env = cfg.make_env(evaluation=True)
        env.reset(seed)
        rssi, moved = [], []
        for t in range(cfg.eval_steps):
            if model is None:
                actions = np.zeros((env.n_agents, 3))
            else:
                raw, _ = model.act(model.actor_inputs(env))
                actions = cfg.delta_max * raw.reshape(env.n_agents, 3)
            res = env.step(actions)
            rssi.append(res.per_user_rssi)
            moved.append(res.moved)
            if log is not None:
                log.record(run, t, res)
        all_rssi.append(rssi)
        all_moved.append(moved)
    return EvalReport(cfg.scheme, np.array(all_rssi), np.array(all_moved))


def adaptation_stats(report: EvalReport, tol_db: float = 3.0, window: int = 4) -> dict:
    """Recovery after each user move.

    For a move after step ``t`` the reference is the mean of the ``window``
    step means up to and including ``t``; recovery is the number of steps
    until a step mean is back above ``reference - tol_db``.  A move that
    does not recover before the next move (or the end of the run) counts as
    ``horizon + 1`` and is reported as censored.
    """
    m = report.step_means
    recoveries, dips, censored = [], [], 0
    for r in range(m.shape[0]):
        moves = np.flatnonzero(report.moved[r])
        for i, t in enumerate(moves):
            if t + 1 < window or t + 1 >= m.shape[1]:
                continue
            end = moves[i + 1] if i + 1 < len(moves) else m.shape[1] - 1
            horizon = end - t
            ref = m[r, t + 1 - window:t + 1].mean()
            after = m[r, t + 1:t + 1 + horizon]
            ok = np.flatnonzero(after >= ref - tol_db)
            if ok.size:
                recoveries.append(int(ok[0]) + 1)
            else:
                recoveries.append(horizon + 1)
                censored += 1
            dips.append(float(ref - after[0]))
    if not recoveries:
        raise ContractError("report contains no usable move events")
    return {"events": len(recoveries), "mean_recovery_steps": float(np.mean(recoveries)),
            "post_move_dip_db": float(np.mean(dips)), "censored": censored}


# -- training and baselines -------------------------------------------------

def train_scheme(cfg: ExperimentConfig, checkpoint_path, metrics_path=None, progress=None) -> TrainResult:
    """Train the scheme's policy from ``cfg.seed`` and save the checkpoint."""
    if cfg.mode is None:
        raise ContractError(f"scheme {cfg.scheme!r} has nothing to train")
    env = cfg.make_env()
    hp = cfg.hyperparameters()
    model = MappoModel.create(cfg.mode, env.n_agents, env.obs_dim, env.global_dim, hp, cfg.seed)
    result = train(lambda: cfg.make_env(), model, hp, cfg.mode, cfg.seed, checkpoint_path, progress)
    if metrics_path is not None:
        result.write_metrics(metrics_path)
    return result


def load_policy(cfg: ExperimentConfig, checkpoint) -> MappoModel:
    if checkpoint is None or not Path(checkpoint).is_file():
        raise ContractError(f"scheme {cfg.scheme!r} needs a checkpoint; {checkpoint!s} not found")
    model, _ = MappoModel.load(checkpoint)
    if model.mode != cfg.mode:
        raise ContractError(f"checkpoint was trained as {model.mode!r}, scheme needs {cfg.mode!r}")
    return model


def run_baseline(cfg: ExperimentConfig, checkpoint=None, log: RolloutLog | None = None) -> EvalReport:
    """Evaluate one scheme; learning schemes load their checkpoint."""
    model = load_policy(cfg, checkpoint) if cfg.mode is not None else None
    return evaluate(cfg, model, log)


def sweep_users(cfg: ExperimentConfig, checkpoint, user_counts=(2, 3, 4)) -> dict:
    """Evaluate one fixed checkpoint for several user counts (agents reuse users cyclically)."""
    if cfg.mode == "single_agent":
        raise ContractError("the single-agent policy observes all users and cannot change K")
    model = load_policy(cfg, checkpoint)
    return {k: evaluate(replace(cfg, users=k), model) for k in user_counts}


def sweep_rows(cfg: ExperimentConfig, checkpoint, row_counts=(5, 7, 9, 11)) -> dict:
    """Evaluate one fixed checkpoint on rebuilt arrays; segment centroids follow the new layout."""
    model = load_policy(cfg, checkpoint)
    return {n: evaluate(replace(cfg, rows=n), model) for n in row_counts}


def _train_and_evaluate(args) -> tuple:
    cfg, ckpt, metrics = args
    result = train_scheme(cfg, ckpt, metrics)
    return result, run_baseline(cfg, ckpt)


def _fan_out(jobs: dict, workdir, tag, workers: int) -> dict:
    """Train and evaluate each config; results are keyed, so merging is order-independent."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    args = {k: (c, workdir / f"{tag}_{k}.ckpt", workdir / f"{tag}_{k}_metrics.csv") for k, c in jobs.items()}
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = {k: pool.submit(_train_and_evaluate, a) for k, a in args.items()}
            return {k: futures[k].result() for k in jobs}
    return {k: _train_and_evaluate(a) for k, a in args.items()}


def sweep_noise(cfg: ExperimentConfig, workdir, sigmas=(0.0, 0.1, 0.3, 0.5, 1.0), workers: int = 1) -> dict:
    """Train and evaluate with Gaussian position noise of each ``sigma`` (metres)."""
    return _fan_out({s: replace(cfg, noise_sigma=float(s)) for s in sigmas}, workdir, "noise", workers)


def ablate_grouping(cfg: ExperimentConfig, workdir, patterns=("columns", "shifted"), workers: int = 1) -> dict:
    return _fan_out({p: replace(cfg, grouping=p) for p in patterns}, workdir, "grouping", workers)


def ablate_reward(cfg: ExperimentConfig, workdir, exponents=(2, 3, 4), workers: int = 1) -> dict:
    """Train with distance-normalized rewards; evaluation still reports plain RSSI."""
    jobs = {n: replace(cfg, reward_mode="dist_norm", reward_n=int(n)) for n in exponents}
    return _fan_out(jobs, workdir, "reward", workers)


def temporal_gap(a: EvalReport, b: EvalReport) -> float:
    return abs(a.mean_dbm - b.mean_dbm)


# -- heatmaps ---------------------------------------------------------------

def heatmap_grid(cfg: ExperimentConfig) -> GridSpec:
    region = cfg.scene_config().user_region
    return GridSpec(region.lo[0], region.hi[0], region.lo[1], region.hi[1], cfg.heatmap_step, region.lo[2])


def emit_heatmap(cfg: ExperimentConfig, out_prefix, checkpoint=None, settle_steps: int = 4) -> dict:
    """Coverage map over the user region after the scheme has focused on the first eval users.

    Writes ``<prefix>.csv`` (2-decimal dBm), ``<prefix>.pgm`` and a
    ``<prefix>_users.csv`` sidecar with the user coordinates.
    """
    out_prefix = Path(out_prefix)
    if not out_prefix.parent.is_dir():
        raise ContractError(f"output directory {out_prefix.parent} does not exist")
    model = load_policy(cfg, checkpoint) if cfg.mode is not None else None
    env = ReflectorEnv(cfg.scene_config(), replace(cfg.env_config(evaluation=False), mobility=False))
    state = env.reset(cfg.eval_seeds()[0])
    for _ in range(settle_steps if model is not None else 0):
        raw, _ = model.act(model.actor_inputs(env))
        env.step(cfg.delta_max * raw.reshape(env.n_agents, 3))
    grid = heatmap_grid(cfg)
    values = rssi_heatmap(env.scene, grid, tracer=env.tracer_for(state.tiles))
    paths = {"csv": out_prefix.with_suffix(".csv"), "pgm": out_prefix.with_suffix(".pgm"),
             "users": out_prefix.parent / f"{out_prefix.name}_users.csv"}
    write_heatmap_csv(paths["csv"], grid, values)
    write_heatmap_pgm(paths["pgm"], values)
    with open(paths["users"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "x", "y", "z"])
        for i, u in enumerate(state.users):
            w.writerow([i] + [f"{v:.6f}" for v in u])
    return {"paths": paths, "values": values, "grid": grid, "users": state.users.copy()}


# -- serialization ----------------------------------------------------------

def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_summary_json(path, summaries) -> None:
    """One summary dict or a list of them, with stable key order."""
    if isinstance(summaries, dict):
        summaries = _clean_dict(summaries)
    else:
        summaries = [_clean_dict(s) for s in summaries]
    with open(path, "w") as fh:
        json.dump(summaries, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _clean_dict(d: dict) -> dict:
    return {k: _clean(v) for k, v in d.items()}


def write_summary_csv(path, key_name: str, rows: dict) -> None:
    """Sweep table: one line per key with the report summary."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([key_name, "scheme", "mean_dbm", "std_dbm", "recovery_steps"])
        for key, report in rows.items():
            s = report.summary()
            rec = "" if s["recovery_steps"] is None else f"{s['recovery_steps']:.4f}"
            w.writerow([key, s["scheme"], f"{s['mean_dbm']:.4f}", f"{s['std_dbm']:.4f}", rec])
