"""PPO: whole-episode rollouts, GAE, clipped surrogate updates with KL early stop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ppoher import kernels
from ppoher.nn import Adam, GaussianPolicy, ValueNet, clip_grad_norm


class NonFiniteLossError(FloatingPointError):
    """Raised when a PPO loss or gradient stops being finite."""


@dataclass(frozen=True)
class PpoConfig:
    n_steps: int = 2048
    minibatch_size: int = 64
    n_epochs: int = 10
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    max_grad_norm: float = 0.5
    target_kl: float | None = 0.05
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not self.clip_range > 0:
            raise ValueError("clip_range must be positive")
        if self.target_kl is not None and not self.target_kl > 0:
            raise ValueError("target_kl must be positive (or None to disable)")
        if self.n_steps < 1 or self.minibatch_size < 1 or self.n_epochs < 1:
            raise ValueError("n_steps, minibatch_size and n_epochs must be positive")


@dataclass
class Episode:
    """One complete trajectory.

    ``obs`` has one more row than there are transitions: the last row is the
    observation after the final step, used for bootstrapping and for HER.
    """

    dims: int
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    bootstrap_value: float | None = None
    relabeled: bool = False
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return self.actions.shape[0]

    @property
    def final_obs(self):
        return self.obs[-1]

    @property
    def ended_terminated(self):
        return bool(self.terminated[-1])

    @property
    def ended_truncated(self):
        return bool(self.truncated[-1])

    def validate(self):
        n = len(self)
        if n < 1:
            raise ValueError("episode must contain at least one transition")
        if self.obs.shape[0] != n + 1:
            raise ValueError("episode is missing its final observation")
        done = self.terminated | self.truncated
        if done[:-1].any():
            raise ValueError("only the last transition may be terminal")
        if self.terminated[-1] and self.truncated[-1]:
            raise ValueError("last transition cannot be both terminated and truncated")

    def transitions(self):
        """Per-step view as plain tuples (obs, action, log_prob, value, reward, terminated, truncated)."""
        for t in range(len(self)):
            yield (
                self.obs[t],
                self.actions[t],
                self.log_probs[t],
                self.values[t],
                self.rewards[t],
                bool(self.terminated[t]),
                bool(self.truncated[t]),
            )


@dataclass
class RolloutBuffer:
    episodes: list = field(default_factory=list)
    adv_mean: float = 0.0
    adv_std: float = 1.0

    @property
    def n_transitions(self):
        return sum(len(ep) for ep in self.episodes)

    @property
    def n_env_steps(self):
        """Transitions that came from the environment (relabeled copies excluded)."""
        return sum(len(ep) for ep in self.episodes if not ep.relabeled)

    def flat(self):
        eps = self.episodes
        out = {
            "obs": np.concatenate([ep.obs[:-1] for ep in eps]),
            "actions": np.concatenate([ep.actions for ep in eps]),
            "log_probs": np.concatenate([ep.log_probs for ep in eps]),
            "values": np.concatenate([ep.values for ep in eps]),
        }
        if all(ep.advantages is not None for ep in eps):
            out["advantages"] = np.concatenate([ep.advantages for ep in eps])
            out["returns"] = np.concatenate([ep.returns for ep in eps])
        return out


def run_episode(policy: GaussianPolicy, value_net: ValueNet, env, rng) -> Episode:
    """Roll one full episode with sampled actions, recording log-probs and values."""
    obs = env.reset().flatten()
    obs_rows, actions, logps, values, rewards = [obs], [], [], [], []
    while True:
        action, logp = policy.sample(obs, rng)
        values.append(value_net.value_one(obs))
        out = env.step(action)
        obs = out.obs.flatten()
        obs_rows.append(obs)
        actions.append(action)
        logps.append(logp)
        rewards.append(out.reward)
        if out.terminated or out.truncated:
            break
    n = len(actions)
    terminated = np.zeros(n, dtype=bool)
    truncated = np.zeros(n, dtype=bool)
    terminated[-1] = out.terminated
    truncated[-1] = out.truncated
    return Episode(
        dims=env.dims,
        obs=np.array(obs_rows),
        actions=np.array(actions),
        log_probs=np.array(logps),
        values=np.array(values),
        rewards=np.array(rewards, dtype=np.float64),
        terminated=terminated,
        truncated=truncated,
        bootstrap_value=value_net.value_one(obs) if out.truncated else 0.0,
    )


def collect_rollout(policy, value_net, env, cfg: PpoConfig, rng) -> RolloutBuffer:
    """Run whole episodes until at least ``cfg.n_steps`` transitions are stored."""
    buf = RolloutBuffer()
    total = 0
    while total < cfg.n_steps:
        ep = run_episode(policy, value_net, env, rng)
        buf.episodes.append(ep)
        total += len(ep)
    return buf


def compute_gae(buffer: RolloutBuffer, value_net=None, gamma=0.99, lam=0.95) -> RolloutBuffer:
    """Fill per-episode advantages and returns in place.

    The value after the last step is used only for truncated episodes.
    ``value_net`` is consulted only when an episode lacks its bootstrap value.
    """
    for ep in buffer.episodes:
        bootstrap = ep.ended_truncated
        if bootstrap and ep.bootstrap_value is None:
            if value_net is None:
                raise ValueError("truncated episode has no bootstrap value and no value_net was given")
            ep.bootstrap_value = value_net.value_one(ep.final_obs)
        last = ep.bootstrap_value if bootstrap else 0.0
        ep.advantages = kernels.gae_episode(
            np.ascontiguousarray(ep.rewards), np.ascontiguousarray(ep.values), float(last),
            bootstrap, gamma, lam,
        )
        ep.returns = ep.advantages + ep.values
    return buffer


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    epochs_run: int
    n_samples: int
    grad_norm: float
    kl_history: list = field(default_factory=list)


def make_optimizer(policy: GaussianPolicy, value_net: ValueNet, cfg: PpoConfig) -> Adam:
    return Adam(policy.parameters() + value_net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def approx_kl(log_ratio):
    """Low-variance KL estimate mean(r - 1 - log r)."""
    log_ratio = np.asarray(log_ratio, dtype=np.float64)
    return float(np.mean(np.expm1(log_ratio) - log_ratio))


def ppo_losses_and_grads(policy, value_net, batch, cfg: PpoConfig):
    """Clipped-surrogate, value and entropy losses for one minibatch with their gradients.

    Gradients are returned in the order of ``policy.parameters() + value_net.parameters()``.
    """
    obs, actions = batch["obs"], batch["actions"]
    adv, old_logp, returns = batch["advantages"], batch["log_probs"], batch["returns"]
    n = obs.shape[0]
    eps = cfg.clip_range

    mu, pcache = policy.mean_net.forward(obs)
    std = np.exp(policy.log_std)
    z = (actions - mu) / std
    logp = np.sum(-0.5 * z * z - policy.log_std - 0.5 * math.log(2 * math.pi), axis=1)
    log_ratio = logp - old_logp
    ratio = np.exp(log_ratio)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    surr1 = ratio * adv
    surr2 = clipped * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    entropy = policy.entropy()

    v, vcache = value_net.net.forward(obs)
    v = v[:, 0]
    value_loss = float(np.mean((returns - v) ** 2))
    total = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy
    if not math.isfinite(total):
        raise NonFiniteLossError(
            f"non-finite loss: policy={policy_loss} value={value_loss} entropy={entropy} "
            f"max|log_ratio|={np.max(np.abs(log_ratio))} log_std={policy.log_std.tolist()}"
        )

    # d(policy_loss)/d(logp): the min picks the unclipped branch or a ratio inside the clip range
    live = (surr1 <= surr2) | ((ratio > 1.0 - eps) & (ratio < 1.0 + eps))
    g_logp = np.where(live, -adv * ratio / n, 0.0)
    g_mu = g_logp[:, None] * z / std
    g_log_std = np.sum(g_logp[:, None] * (z * z - 1.0), axis=0) - cfg.ent_coef
    mean_grads, _ = policy.mean_net.backward(pcache, g_mu)
    g_v = (cfg.vf_coef * 2.0 * (v - returns) / n)[:, None]
    value_grads, _ = value_net.net.backward(vcache, g_v)

    info = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "total": total,
        "approx_kl": approx_kl(log_ratio),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
    }
    return info, mean_grads + [g_log_std] + value_grads


def normalize_advantages(adv):
    """Zero-mean, unit-std copy of ``adv`` (left centred only when it is constant)."""
    adv = np.asarray(adv, dtype=np.float64)
    centred = adv - adv.mean()
    std = centred.std()
    return centred / std if std > 1e-12 else centred


def ppo_update(policy, value_net, buffer: RolloutBuffer, cfg: PpoConfig, optimizer: Adam, rng) -> UpdateStats:
    data = buffer.flat()
    if "advantages" not in data:
        raise ValueError("compute_gae must run before ppo_update")
    n = data["obs"].shape[0]
    raw_adv = data["advantages"]
    buffer.adv_mean = float(raw_adv.mean())
    buffer.adv_std = float(raw_adv.std())
    data["advantages"] = normalize_advantages(raw_adv)

    kl_history = []
    epochs_run = 0
    last = {}
    grad_norm = 0.0
    for _ in range(cfg.n_epochs):
        perm = rng.permutation(n)
        epoch_kl, epoch_info = [], []
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start : start + cfg.minibatch_size]
            batch = {k: v[idx] for k, v in data.items()}
            info, grads = ppo_losses_and_grads(policy, value_net, batch, cfg)
            grad_norm = clip_grad_norm(grads, cfg.max_grad_norm)
            if not math.isfinite(grad_norm):
                raise NonFiniteLossError(f"non-finite gradient norm; last losses {info}")
            optimizer.step(grads)
            policy.clamp_log_std()
            epoch_kl.append(info["approx_kl"])
            epoch_info.append(info)
        epochs_run += 1
        kl = float(np.mean(epoch_kl))
        kl_history.append(kl)
        last = {k: float(np.mean([i[k] for i in epoch_info])) for k in epoch_info[0]}
        last["approx_kl"] = kl
        if cfg.target_kl is not None and kl > cfg.target_kl:
            break
    return UpdateStats(
        policy_loss=last["policy_loss"],
        value_loss=last["value_loss"],
        entropy=policy.entropy(),
        approx_kl=last["approx_kl"],
        clip_fraction=last["clip_fraction"],
        epochs_run=epochs_run,
        n_samples=n,
        grad_norm=grad_norm,
        kl_history=kl_history,
    )


def evaluate(policy: GaussianPolicy, env, n_episodes: int = 100):
    """Run ``n_episodes`` with the deterministic mean action.

    Returns ``(success_rate, mean_return)``; success means the episode ended
    by interception.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    successes = 0
    total_return = 0.0
    for _ in range(n_episodes):
        obs = env.reset().flatten()
        ep_return = 0.0
        while True:
            out = env.step(policy.mean_net.predict_one(obs))
            ep_return += out.reward
            obs = out.obs.flatten()
            if out.terminated or out.truncated:
                break
        successes += bool(out.terminated)
        total_return += ep_return
    return successes / n_episodes, total_return / n_episodes
