"""Multi-agent focal-point control environment.

Each agent owns a segment of the reflector and moves one focal point; all
of its tiles aim the access-point ray at that point.  The reward is the
mean RSSI (dBm) over users, evaluated by the ray tracer at the true user
positions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .raytracer import RSSI_FLOOR_DBM, Tracer, compile_surfaces, concat_arrays, rssi_from_sums
from .reflector import (SERVO_LIMIT, Assignment, FocalConstraints, ReflectorArray, apply_focal_points,
                        assign_columns, assign_shifted, hex_layout, segment_centroids)
from .scene import Box, SceneConfig, build_l_hallway
from .vectormath import ContractError

TILE_MODES = ("controlled", "flat", "absent")


@dataclass(frozen=True)
class EnvConfig:
    n_users: int = 3
    n_agents: int = 3
    grouping: str = "columns"
    control_mode: str = "per_tile"
    tiles: str = "controlled"
    reward_mode: str = "mean"
    reward_n: int = 2
    noise_sigma: float = 0.0
    episode_length: int = 20
    mobility: bool = False
    move_every: int = 4
    delta_max: float = 0.5
    focal_margin_m: float = 2.0
    focal_z_range: tuple = (0.5, 2.5)
    max_bounces: int = 2

    def __post_init__(self):
        if self.n_users < 1 or self.n_agents < 1:
            raise ContractError("need at least one user and one agent")
        if self.grouping not in ("columns", "shifted"):
            raise ContractError(f"unknown grouping {self.grouping!r}")
        if self.control_mode not in ("per_tile", "column_azimuth"):
            raise ContractError(f"unknown control mode {self.control_mode!r}")
        if self.tiles not in TILE_MODES:
            raise ContractError(f"unknown tile mode {self.tiles!r}")
        if self.reward_mode not in ("mean", "dist_norm"):
            raise ContractError(f"unknown reward mode {self.reward_mode!r}")
        if self.noise_sigma < 0:
            raise ContractError("noise sigma must be non-negative")
        if self.episode_length < 1 or self.move_every < 1:
            raise ContractError("episode length and move cadence must be positive")


@dataclass
class GlobalState:
    users: np.ndarray  # (K, 3) true positions
    observed_users: np.ndarray  # (K, 3) possibly noise-corrupted
    segments: np.ndarray  # (L, 3)
    focals: np.ndarray  # (L, 3)
    step_index: int
    tiles: ReflectorArray | None

    def copy(self) -> "GlobalState":
        return GlobalState(self.users.copy(), self.observed_users.copy(), self.segments.copy(),
                           self.focals.copy(), self.step_index,
                           None if self.tiles is None else self.tiles.copy())


@dataclass(frozen=True)
class LocalObservation:
    assigned_user: np.ndarray
    segment: np.ndarray
    focal: np.ndarray
    vector: np.ndarray  # normalized concatenation, 9 reals


@dataclass
class StepResult:
    next_state: GlobalState
    reward: float
    per_user_rssi: np.ndarray
    done: bool
    moved: bool = False


def reward(rssi_dbm, mode: str = "mean", distances=None, n: int = 2) -> float:
    """Mean RSSI, or mean of distance-compensated RSSI ``rssi + 10 n log10 d``.

    The compensated form is the dB image of multiplying linear power by
    ``d**n``.
    """
    rssi = np.asarray(rssi_dbm, dtype=float)
    if rssi.size == 0:
        raise ContractError("reward needs at least one user")
    if mode == "mean":
        return float(np.mean(rssi))
    if mode != "dist_norm":
        raise ContractError(f"unknown reward mode {mode!r}")
    if n not in (2, 3, 4):
        raise ContractError("distance exponent must be 2, 3 or 4")
    d = np.asarray(distances, dtype=float)
    if d.shape != rssi.shape:
        raise ContractError("one distance per user required")
    if np.any(d <= 0):
        raise ContractError("distances must be positive")
    return float(np.mean(rssi + 10.0 * n * np.log10(d)))


def noisy_positions(users, sigma_m: float, rng: np.random.Generator) -> np.ndarray:
    if sigma_m < 0:
        raise ContractError("noise sigma must be non-negative")
    users = np.asarray(users, dtype=float)
    if sigma_m == 0:
        return users.copy()
    return users + rng.normal(0.0, sigma_m, size=users.shape)


def assigned_user(agent: int, n_users: int) -> int:
    """0-based user served by 0-based agent: users are reused cyclically."""
    return agent % n_users


class ReflectorEnv:
    """Focal-point MDP over the L-shaped hallway.

    Random streams for user placement, tile initialisation and position
    noise are independent, so schemes evaluated with the same seed see the
    same user trajectories.
    """

    def __init__(self, scene_cfg: SceneConfig | None = None, cfg: EnvConfig | None = None):
        self.scene_cfg = scene_cfg or SceneConfig()
        self.cfg = cfg or EnvConfig()
        sc = self.scene_cfg
        self.scene = build_l_hallway(sc)
        self.static = compile_surfaces(self.scene.surfaces, self.scene.frequency_hz)
        self.array0 = hex_layout(sc.reflector_rows, sc.reflector_cols, sc.reflector_pitch_m,
                                 sc.reflector_center, sc.panel_base_normal())
        L = self.cfg.n_agents
        if self.cfg.grouping == "columns":
            self.assignment = assign_columns(sc.reflector_rows, sc.reflector_cols, L)
        else:
            self.assignment = assign_shifted(sc.reflector_rows, sc.reflector_cols, L)
        self.constraints = FocalConstraints.around(
            self.scene.user_region, L, self.cfg.focal_margin_m, self.cfg.focal_z_range,
            delta_max=self.cfg.delta_max)
        self.segments = segment_centroids(self.array0, self.assignment)
        lo = np.minimum(self.constraints.lo.min(axis=0), self.array0.positions.min(axis=0))
        hi = np.maximum(self.constraints.hi.max(axis=0), self.array0.positions.max(axis=0))
        self.obs_box = Box(lo, hi)
        self._static_tracer = Tracer(self.static, self.scene.frequency_hz, self.cfg.max_bounces)
        self.state: GlobalState | None = None
        self._rng_users = self._rng_tiles = self._rng_noise = None

    # -- dimensions ----------------------------------------------------
    @property
    def n_agents(self) -> int:
        return self.cfg.n_agents

    @property
    def n_users(self) -> int:
        return self.cfg.n_users

    obs_dim = 9

    @property
    def global_dim(self) -> int:
        return 3 * self.n_users + 6 * self.n_agents

    # -- normalisation -------------------------------------------------
    def normalize(self, p: np.ndarray) -> np.ndarray:
        return 2.0 * (p - self.obs_box.lo) / (self.obs_box.hi - self.obs_box.lo) - 1.0

    def denormalize(self, q: np.ndarray) -> np.ndarray:
        return self.obs_box.lo + (np.asarray(q) + 1.0) * 0.5 * (self.obs_box.hi - self.obs_box.lo)

    # -- dynamics ------------------------------------------------------
    def reset(self, seed: int) -> GlobalState:
        ss = np.random.SeedSequence(seed)
        self._rng_users, self._rng_tiles, self._rng_noise = (np.random.default_rng(s) for s in ss.spawn(3))
        users = self.scene.user_region.sample(self._rng_users, self.n_users)
        observed = noisy_positions(users, self.cfg.noise_sigma, self._rng_noise)
        focals = np.stack([observed[assigned_user(l, self.n_users)] for l in range(self.n_agents)])
        focals = np.minimum(np.maximum(focals, self.constraints.lo), self.constraints.hi)
        tiles = None
        if self.cfg.tiles != "absent":
            tiles = self.array0.copy()
            if self.cfg.tiles == "controlled":
                n = tiles.n_tiles
                tiles.theta = self._rng_tiles.uniform(-SERVO_LIMIT, SERVO_LIMIT, n)
                tiles.phi = self._rng_tiles.uniform(-SERVO_LIMIT, SERVO_LIMIT, n)
        self.state = GlobalState(users, observed, self.segments.copy(), focals, 0, tiles)
        return self.state

    def move_users(self, state: GlobalState) -> GlobalState:
        """Resample every user uniformly in the UE region; the agent-user map is unchanged."""
        state.users = self.scene.user_region.sample(self._rng_users, self.n_users)
        state.observed_users = noisy_positions(state.users, self.cfg.noise_sigma, self._rng_noise)
        return state

    def tracer_for(self, tiles: ReflectorArray | None) -> Tracer:
        if tiles is None:
            return self._static_tracer
        arrays = concat_arrays([self.static, tiles.surface_arrays()])
        return Tracer(arrays, self.scene.frequency_hz, self.cfg.max_bounces)

    def user_rssi(self, state: GlobalState) -> np.ndarray:
        tracer = self.tracer_for(state.tiles)
        sums, counts = tracer.coefficient_sums(self.scene.ap_position, state.users)
        return rssi_from_sums(sums, counts, self.scene.ap_power_dbm)

    def user_distances(self, state: GlobalState) -> np.ndarray:
        return np.linalg.norm(state.users - self.scene.ap_position, axis=1)

    def clip_actions(self, actions) -> np.ndarray:
        a = np.asarray(actions, dtype=float).reshape(self.n_agents, 3)
        return np.clip(a, -self.cfg.delta_max, self.cfg.delta_max)

    def step(self, actions) -> StepResult:
        """Advance one step with per-agent focal displacements in metres."""
        if self.state is None:
            raise ContractError("reset() must be called before step()")
        st = self.state
        if self.cfg.tiles == "controlled":
            st.focals = np.minimum(np.maximum(st.focals + self.clip_actions(actions), self.constraints.lo),
                                   self.constraints.hi)
            st.tiles = apply_focal_points(st.tiles, st.focals, self.assignment, self.scene.ap_position,
                                          self.constraints, self.cfg.control_mode)
        rssi = self.user_rssi(st)
        r = reward(rssi, self.cfg.reward_mode, self.user_distances(st), self.cfg.reward_n)
        st.step_index += 1
        moved = False
        if self.cfg.mobility and st.step_index % self.cfg.move_every == 0:
            self.move_users(st)
            moved = True
        done = st.step_index >= self.cfg.episode_length
        return StepResult(st, r, rssi, done, moved)

    # -- observations --------------------------------------------------
    def observe(self, state: GlobalState, agent: int) -> LocalObservation:
        """Local view of 0-based ``agent``: its user, its segment centroid, its focal."""
        if not 0 <= agent < self.n_agents:
            raise ContractError(f"invalid agent id {agent}")
        u = state.observed_users[assigned_user(agent, self.n_users)]
        seg = state.segments[agent]
        f = state.focals[agent]
        vec = np.concatenate([self.normalize(u), self.normalize(seg), self.normalize(f)])
        return LocalObservation(u.copy(), seg.copy(), f.copy(), vec)

    def observations(self, state: GlobalState | None = None) -> np.ndarray:
        state = state or self.state
        return np.stack([self.observe(state, l).vector for l in range(self.n_agents)])

    def global_vector(self, state: GlobalState | None = None, observed: bool = False) -> np.ndarray:
        state = state or self.state
        users = state.observed_users if observed else state.users
        return np.concatenate([self.normalize(users).ravel(), self.normalize(state.segments).ravel(),
                               self.normalize(state.focals).ravel()])


class RolloutLog:
    """Per-step CSV trace: episode, step, per-user RSSI, reward and focal coordinates."""

    def __init__(self, n_users: int, n_agents: int):
        self.header = (["episode", "step"] + [f"rssi_{k}" for k in range(n_users)] + ["reward"]
                       + [f"focal_{l}_{a}" for l in range(n_agents) for a in "xyz"])
        self.rows: list[list] = []

    def record(self, episode: int, step: int, result: StepResult) -> None:
        row = [episode, step] + [f"{v:.6f}" for v in result.per_user_rssi] + [f"{result.reward:.6f}"]
        row += [f"{v:.6f}" for v in result.next_state.focals.ravel()]
        self.rows.append(row)

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            w.writerows(self.rows)
