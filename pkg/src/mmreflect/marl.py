"""MAPPO with a centralized critic, plus the single-agent PPO baseline.

Actors emit displacements in units of ``delta_max`` (the environment
clips to ``[-1, 1]`` of that after scaling); log densities always refer to
the unclipped sample.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .neuralnet import (AdamState, DenseNet, GaussianPolicyHead, adam_step, build_mlp, forward, gaussian_log_prob,
                        grad, load_checkpoint, make_policy, policy_entropy, save_checkpoint)
from .vectormath import ContractError

MODES = ("multi_agent", "single_agent", "column_ma")
METRIC_FIELDS = ("episode", "mean_reward", "actor_loss", "critic_loss", "entropy", "clip_fraction", "kl")


@dataclass(frozen=True)
class Hyperparameters:
    gamma: float = 0.985
    lambda_gae: float = 0.9
    clip_eps: float = 0.2
    c1: float = 0.5
    c2: float = 1e-4
    lr: float = 2e-4
    buffer: int = 1000
    minibatch: int = 200
    epochs_per_update: int = 4
    episodes: int = 300
    kl_stop: float = 0.05
    hidden: tuple = (256, 256)
    init_std: float = 0.3
    # Learner-side affine map of the dBm reward; the environment reward is untouched.
    reward_shift: float = -140.0
    reward_scale: float = 2000.0
    bootstrap_truncation: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 <= self.lambda_gae <= 1):
            raise ContractError("gamma must be in (0, 1] and lambda in [0, 1]")
        if not self.clip_eps > 0:
            raise ContractError("clip_eps must be positive")
        if self.minibatch < 2 or self.buffer < self.minibatch:
            raise ContractError("buffer must hold at least one minibatch of >= 2")
        if self.epochs_per_update < 1 or self.episodes < 0:
            raise ContractError("epochs must be >= 1 and episodes >= 0")
        if not self.reward_scale > 0:
            raise ContractError("reward_scale must be positive")


# -- estimators ---------------------------------------------------------

def compute_gae(rewards, values, bootstrap_value: float, gamma: float, lam: float, dones=None):
    """Generalized advantage estimates and value targets.

    ``dones[t]`` marks the last transition of an episode: the next value is
    taken as zero and the accumulation restarts.  ``bootstrap_value`` is
    used only after a non-terminal final transition.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.size == 0:
        raise ContractError("empty trajectory")
    if v.shape != r.shape:
        raise ContractError("one value per reward required")
    d = np.zeros(r.size, bool) if dones is None else np.asarray(dones, dtype=bool)
    adv = np.empty_like(r)
    acc = 0.0
    next_v = float(bootstrap_value)
    for t in range(r.size - 1, -1, -1):
        if d[t]:
            next_v, acc = 0.0, 0.0
        delta = r[t] + gamma * next_v - v[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
        next_v = v[t]
    return adv, adv + v


def normalize_advantages(adv) -> np.ndarray:
    a = np.asarray(adv, dtype=float)
    if a.size < 2:
        raise ContractError("need at least two advantages to normalize")
    return (a - a.mean()) / (a.std() + 1e-8)


def ppo_clip_term(ratio, adv, eps: float):
    ratio = np.asarray(ratio, dtype=float)
    if np.any(ratio <= 0):
        raise ContractError("probability ratio must be positive")
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def critic_loss(predicted, targets) -> float:
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.size == 0 or p.shape != t.shape:
        raise ContractError("predicted and targets must be equal-length and non-empty")
    return float(np.mean((p - t) ** 2))


# -- model ----------------------------------------------------------------

@dataclass
class MappoModel:
    """Per-agent actors (unshared) and one critic on the global state."""

    mode: str
    actors: list
    critic: DenseNet
    actor_opt: list
    critic_opt: AdamState

    @classmethod
    def create(cls, mode: str, n_agents: int, obs_dim: int, global_dim: int, hp: Hyperparameters,
               seed: int) -> "MappoModel":
        if mode not in MODES:
            raise ContractError(f"unknown mode {mode!r}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        if mode == "single_agent":
            actors = [make_policy(rng, global_dim, 3 * n_agents, hp.hidden, hp.init_std)]
        else:
            actors = [make_policy(rng, obs_dim, 3, hp.hidden, hp.init_std) for _ in range(n_agents)]
        critic = build_mlp(rng, [global_dim, *hp.hidden, 1], out_gain=1.0)
        return cls(mode, actors, critic, [AdamState.for_params(a.params(), lr=hp.lr) for a in actors],
                   AdamState.for_params(critic.params(), lr=hp.lr))

    @property
    def n_agents(self) -> int:
        return self.actors[0].action_dim // 3 if self.mode == "single_agent" else len(self.actors)

    @property
    def obs_dim(self) -> int:
        return self.actors[0].net.input_dim

    def actor_inputs(self, env) -> np.ndarray:
        """Per-actor input rows: local observations, or the observed global state for one actor."""
        if self.mode == "single_agent":
            return env.global_vector(observed=True)[None, :]
        return env.observations()

    def act(self, inputs: np.ndarray, rng: np.random.Generator | None = None):
        """Normalized actions ``(n_agents, 3)`` and per-actor log densities.

        ``rng=None`` gives the deterministic mean action.
        """
        means = [a.mean(x) for a, x in zip(self.actors, inputs)]
        if rng is None:
            raw = np.stack(means)
            logp = np.array([gaussian_log_prob(m, a.log_std, m) for a, m in zip(self.actors, means)])
        else:
            raw = np.stack([m + np.exp(a.log_std) * rng.standard_normal(m.shape) for a, m in zip(self.actors, means)])
            logp = np.array([gaussian_log_prob(m, a.log_std, x) for a, m, x in zip(self.actors, means, raw)])
        return raw, logp

    def value(self, global_state) -> np.ndarray:
        return forward(self.critic, global_state)[..., 0]

    # -- persistence -----------------------------------------------------
    def tensors(self) -> dict:
        out = {}
        for i, (a, opt) in enumerate(zip(self.actors, self.actor_opt)):
            _put(out, f"actor{i}", a.params(), opt)
        _put(out, "critic", self.critic.params(), self.critic_opt)
        return out

    def meta(self) -> dict:
        return {"mode": self.mode, "n_actors": len(self.actors), "obs_dim": self.obs_dim,
                "action_dim": self.actors[0].action_dim, "global_dim": self.critic.input_dim,
                "hidden": [l.weights.shape[1] for l in self.critic.layers[:-1]],
                "lr": self.critic_opt.lr}

    def save(self, path, rng: np.random.Generator | None = None, extra: dict | None = None) -> None:
        meta = self.meta()
        if rng is not None:
            meta["rng_state"] = rng.bit_generator.state
        meta.update(extra or {})
        save_checkpoint(path, self.tensors(), meta)

    @classmethod
    def load(cls, path) -> tuple["MappoModel", dict]:
        tensors, meta = load_checkpoint(path)
        hp = Hyperparameters(hidden=tuple(meta["hidden"]), lr=meta["lr"])
        n_agents = meta["action_dim"] // 3 if meta["mode"] == "single_agent" else meta["n_actors"]
        model = cls.create(meta["mode"], n_agents, meta["obs_dim"], meta["global_dim"], hp, 0)
        if model.obs_dim != meta["obs_dim"]:
            raise ContractError("checkpoint actor input width mismatch")
        for i, (a, opt) in enumerate(zip(model.actors, model.actor_opt)):
            _take(tensors, f"actor{i}", a.params(), opt)
        _take(tensors, "critic", model.critic.params(), model.critic_opt)
        return model, meta


def _put(out: dict, prefix: str, params: list, opt: AdamState) -> None:
    for j, (p, m, v) in enumerate(zip(params, opt.m, opt.v)):
        out[f"{prefix}.p{j:02d}"] = p
        out[f"{prefix}.m{j:02d}"] = m
        out[f"{prefix}.v{j:02d}"] = v
    out[f"{prefix}.t"] = np.array(float(opt.t))


def _take(tensors: dict, prefix: str, params: list, opt: AdamState) -> None:
    for j, (p, m, v) in enumerate(zip(params, opt.m, opt.v)):
        p[...] = tensors[f"{prefix}.p{j:02d}"]
        m[...] = tensors[f"{prefix}.m{j:02d}"]
        v[...] = tensors[f"{prefix}.v{j:02d}"]
    opt.t = int(tensors[f"{prefix}.t"].item())


# -- rollout storage --------------------------------------------------------

class TrajectoryBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.clear()

    def clear(self) -> None:
        self.global_states, self.inputs, self.actions, self.log_probs = [], [], [], []
        self.rewards, self.values, self.dones, self.truncation_values = [], [], [], []

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    def add(self, global_state, inputs, actions, log_probs, reward, value, done, truncation_value=0.0) -> None:
        self.global_states.append(np.asarray(global_state, float))
        self.inputs.append(np.asarray(inputs, float))
        self.actions.append(np.asarray(actions, float))
        self.log_probs.append(np.asarray(log_probs, float))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))
        self.truncation_values.append(float(truncation_value))

    def arrays(self) -> dict:
        return {"global_states": np.stack(self.global_states), "inputs": np.stack(self.inputs),
                "actions": np.stack(self.actions), "log_probs": np.stack(self.log_probs),
                "rewards": np.array(self.rewards), "values": np.array(self.values),
                "dones": np.array(self.dones), "truncation_values": np.array(self.truncation_values)}


# -- update -----------------------------------------------------------------

def actor_gradients(head: GaussianPolicyHead, obs, actions, old_logp, adv, clip_eps: float, c2: float):
    """Gradients of ``-(mean clipped surrogate + c2 * entropy)`` for one actor.

    Returns ``(grads, stats)`` with grads in :meth:`GaussianPolicyHead.params` order.
    """
    mu = head.mean(obs)
    inv_std = np.exp(-head.log_std)
    z = (actions - mu) * inv_std
    logp = np.sum(-0.5 * z * z - head.log_std - 0.5 * math.log(2 * math.pi), axis=1)
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr = np.minimum(ratio * adv, clipped * adv)
    active = ratio * adv <= clipped * adv
    n = len(adv)
    g_logp = -(active * ratio * adv) / n  # d loss / d logp per sample
    upstream = g_logp[:, None] * z * inv_std  # d logp / d mu = z / sigma
    net_grads, _ = grad(head.net, obs, upstream)
    g_log_std = np.sum(g_logp[:, None] * (z * z - 1.0), axis=0) - c2
    log_ratio = logp - old_logp
    stats = {"actor_loss": float(-surr.mean()), "entropy": policy_entropy(head),
             "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
             "kl": float(np.mean(ratio - 1.0 - log_ratio))}
    return net_grads + [g_log_std], stats


def prepare_batch(model: MappoModel, buffer: TrajectoryBuffer, hp: Hyperparameters, bootstrap_value: float = 0.0):
    data = buffer.arrays()
    rewards = (data["rewards"] - hp.reward_shift) / hp.reward_scale
    # A time-limit end is not terminal: fold the critic's value of the final state into the last reward.
    rewards = rewards + hp.gamma * data["truncation_values"]
    adv, returns = compute_gae(rewards, data["values"], bootstrap_value, hp.gamma, hp.lambda_gae, data["dones"])
    data["advantages"], data["returns"] = adv, returns
    return data


def mappo_update(model: MappoModel, data: dict, hp: Hyperparameters, rng: np.random.Generator) -> dict:
    """Clipped-surrogate epochs over shuffled minibatches with KL early stopping.

    ``data`` comes from :func:`prepare_batch`; advantages are normalized per
    minibatch and shared by every actor.
    """
    n = len(data["rewards"])
    if n < hp.minibatch:
        raise ContractError(f"buffer holds {n} transitions, fewer than one minibatch")
    totals = {k: [] for k in ("actor_loss", "critic_loss", "entropy", "clip_fraction", "kl")}
    stop = False
    for _ in range(hp.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n - hp.minibatch + 1, hp.minibatch):
            idx = order[start:start + hp.minibatch]
            adv = normalize_advantages(data["advantages"][idx])
            kls = []
            for i, (head, opt) in enumerate(zip(model.actors, model.actor_opt)):
                grads, st = actor_gradients(head, data["inputs"][idx, i], data["actions"][idx, i],
                                            data["log_probs"][idx, i], adv, hp.clip_eps, hp.c2)
                adam_step(head.params(), grads, opt)
                for k in ("actor_loss", "entropy", "clip_fraction"):
                    totals[k].append(st[k])
                kls.append(st["kl"])
            gs = data["global_states"][idx]
            pred = model.value(gs)
            target = data["returns"][idx]
            totals["critic_loss"].append(critic_loss(pred, target))
            upstream = (hp.c1 * 2.0 * (pred - target) / len(idx))[:, None]
            cgrads, _ = grad(model.critic, gs, upstream)
            adam_step(model.critic.params(), cgrads, model.critic_opt)
            totals["kl"].append(float(np.mean(kls)))
            if totals["kl"][-1] > hp.kl_stop:
                stop = True
                break
        if stop:
            break
    return {k: float(np.mean(v)) for k, v in totals.items()}


# -- training loop ----------------------------------------------------------

@dataclass
class TrainResult:
    curve: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    updates: int = 0

    def write_metrics(self, path) -> None:
        write_metrics_csv(path, self.rows)


def _fmt(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r["episode"]] + [_fmt(r[k]) for k in METRIC_FIELDS[1:]])


def episode_seed(seed: int, episode: int) -> list[int]:
    return [seed, episode]


def train(env_factory, model: MappoModel, hp: Hyperparameters, mode: str, seed: int,
          checkpoint_path=None, progress=None) -> TrainResult:
    """Run ``hp.episodes`` episodes, updating whenever the rollout buffer is full.

    Returns per-episode mean (dBm) reward and metrics rows; the losses in a
    row are those of the most recent update.
    """
    if mode not in MODES:
        raise ContractError(f"unknown mode {mode!r}")
    if (mode == "single_agent") != (model.mode == "single_agent"):
        raise ContractError(f"model built for {model.mode!r} cannot train in {mode!r}")
    env = env_factory()
    delta = env.cfg.delta_max
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAC7]))
    buffer = TrajectoryBuffer(hp.buffer)
    result = TrainResult()
    last = {k: float("nan") for k in METRIC_FIELDS[2:]}
    for ep in range(hp.episodes):
        env.reset(episode_seed(seed, ep))
        rewards = []
        done = False
        while not done:
            inputs = model.actor_inputs(env)
            gs = env.global_vector()
            value = float(model.value(gs))
            raw, logp = model.act(inputs, rng)
            res = env.step(delta * raw.reshape(env.n_agents, 3))
            done = res.done
            boot = float(model.value(env.global_vector())) if done and hp.bootstrap_truncation else 0.0
            buffer.add(gs, inputs, raw.reshape(len(model.actors), -1), logp, res.reward, value, done, boot)
            rewards.append(res.reward)
        if buffer.full:
            data = prepare_batch(model, buffer, hp)
            last = mappo_update(model, data, hp, rng)
            buffer.clear()
            result.updates += 1
        row = {"episode": ep, "mean_reward": float(np.mean(rewards)), **last}
        result.rows.append(row)
        result.curve.append(row["mean_reward"])
        if progress is not None:
            progress(row)
        if checkpoint_path and hp.checkpoint_every and (ep + 1) % hp.checkpoint_every == 0:
            model.save(checkpoint_path, rng, {"episode": ep + 1})
    if checkpoint_path:
        model.save(checkpoint_path, rng, {"episode": hp.episodes})
    return result
