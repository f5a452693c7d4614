"""Hindsight goal relabeling for on-policy PPO rollouts.

Completed episodes are copied with their desired goal replaced by a position
the predator actually reached. Rewards are recomputed with the environment's
reward function, each copy is cut at its first success, and the action
log-probabilities and values are re-evaluated under the current networks so
the copies can be fed to the clipped surrogate like ordinary rollout data.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from ppoher.env import EnvConfig, compute_reward, goal_slices
from ppoher.ppo import Episode, RolloutBuffer


class HerStrategy(str, enum.Enum):
    FINAL = "final"
    FUTURE = "future"
    EPISODE = "episode"
    NONE = "none"


@dataclass(frozen=True)
class HerConfig:
    strategy: HerStrategy = HerStrategy.FINAL
    k: int = 4
    zero_prey_velocity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategy", HerStrategy(self.strategy))
        if self.strategy in (HerStrategy.FUTURE, HerStrategy.EPISODE) and self.k < 1:
            raise ValueError("k must be >= 1 for the future and episode strategies")


def _goal_indices(ep: Episode, her: HerConfig, rng) -> list[int]:
    """Rows of ``ep.obs`` whose achieved goal becomes the substitute goal."""
    n = len(ep)
    if her.strategy is HerStrategy.FINAL:
        return [n]
    if her.strategy is HerStrategy.FUTURE:
        # positions reached after at least one step
        return [int(j) for j in rng.integers(1, n + 1, size=her.k)]
    if her.strategy is HerStrategy.EPISODE:
        return [int(j) for j in rng.integers(0, n + 1, size=her.k)]
    return []


def relabel_with_goal(ep: Episode, goal, cfg: EnvConfig, zero_prey_velocity=False) -> Episode:
    """Copy of ``ep`` pursuing ``goal`` instead of the original desired goal.

    The copy ends at its first interception. If it never intercepts and the
    source ended before the horizon, the copy is marked truncated so it gets
    bootstrapped rather than treated as absorbing. Log-probs and values are
    carried over and must be refreshed with :func:`recompute_policy_quantities`.
    """
    if ep.obs.shape[0] != len(ep) + 1:
        raise ValueError("episode has no final observation")
    d = ep.dims
    state_sl, ach_sl, des_sl = goal_slices(d)
    goal = np.asarray(goal, dtype=np.float64)
    n = len(ep)
    rewards = np.empty(n)
    length = n
    term = trunc = False
    for t in range(n):
        r, term, trunc = compute_reward(ep.obs[t + 1, ach_sl], goal, cfg, t + 1)
        rewards[t] = r
        if term or trunc:
            length = t + 1
            break
    if not (term or trunc):
        trunc = True
    obs = ep.obs[: length + 1].copy()
    obs[:, des_sl] = goal
    if zero_prey_velocity:
        obs[:, 2 * d : 3 * d] = 0.0
    terminated = np.zeros(length, dtype=bool)
    truncated = np.zeros(length, dtype=bool)
    terminated[-1] = term
    truncated[-1] = trunc
    return Episode(
        dims=d,
        obs=obs,
        actions=ep.actions[:length].copy(),
        log_probs=ep.log_probs[:length].copy(),
        values=ep.values[:length].copy(),
        rewards=rewards[:length],
        terminated=terminated,
        truncated=truncated,
        bootstrap_value=None,
        relabeled=True,
    )


def relabel_episode(ep: Episode, her: HerConfig, cfg: EnvConfig, rng) -> list[Episode]:
    """Relabeled copies of one episode: one for ``final``, ``k`` for ``future``/``episode``."""
    if ep.obs.shape[0] != len(ep) + 1:
        raise ValueError("episode has no final observation")
    _, ach_sl, _ = goal_slices(ep.dims)
    return [
        relabel_with_goal(ep, ep.obs[j, ach_sl], cfg, her.zero_prey_velocity)
        for j in _goal_indices(ep, her, rng)
    ]


def recompute_policy_quantities(episodes, policy, value_net):
    """Refresh log-probs, values and bootstrap values of relabeled episodes in place.

    Episodes not flagged as relabeled are left untouched.
    """
    for ep in episodes:
        if not ep.relabeled:
            continue
        inputs = ep.obs[:-1]
        ep.log_probs = policy.log_prob(inputs, ep.actions)
        ep.values = value_net(inputs)
        ep.bootstrap_value = value_net.value_one(ep.final_obs) if ep.ended_truncated else 0.0
    return episodes


def augment_buffer(buffer: RolloutBuffer, her: HerConfig, policy, value_net, cfg: EnvConfig, rng) -> RolloutBuffer:
    """Originals plus their relabeled copies (with refreshed policy quantities).

    Returns ``buffer`` itself when the strategy is ``none``; no random numbers
    are drawn in that case.
    """
    if her.strategy is HerStrategy.NONE:
        return buffer
    extra = []
    for ep in buffer.episodes:
        if ep.relabeled:
            continue
        extra.extend(relabel_episode(ep, her, cfg, rng))
    recompute_policy_quantities(extra, policy, value_net)
    return replace(buffer, episodes=list(buffer.episodes) + extra)
