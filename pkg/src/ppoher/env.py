"""Parameterized predator-prey pursuit environments.

A predator controlled by the learner must come within ``intercept_dist`` of a
prey that follows one of six scripted motion policies inside the hypercube
``[0, size]^dims``. Rewards are sparse: +1 on interception (episode ends), -1
when the horizon runs out, 0 otherwise.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ppoher import kernels

log = logging.getLogger(__name__)


class PreyPolicy(str, enum.Enum):
    ATTRACT = "attract"
    RANDOM = "random"
    RANDOM_DIRECTION = "random_direction"
    REPEL = "repel"
    STRAIGHT_AWAY = "straight_away"
    STATIC = "static"


class SpawnPolicy(str, enum.Enum):
    RANDOM = "random"
    APART = "apart"


ATTRACT_MIN_ANGLE = math.radians(6.0)
MAX_TURN_ANGLE = math.radians(90.0)


@dataclass(frozen=True)
class EnvConfig:
    dims: int = 3
    size: float = 10.0
    intercept_dist: float = 1.0
    prey_policy: PreyPolicy = PreyPolicy.STATIC
    spawn_policy: SpawnPolicy = SpawnPolicy.APART
    max_steps: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prey_policy", PreyPolicy(self.prey_policy))
        object.__setattr__(self, "spawn_policy", SpawnPolicy(self.spawn_policy))
        if int(self.dims) != self.dims or self.dims < 1:
            raise ValueError(f"dims must be a positive integer, got {self.dims}")
        if not self.size > 0:
            raise ValueError(f"size must be positive, got {self.size}")
        if not self.intercept_dist > 0:
            raise ValueError(f"intercept_dist must be positive, got {self.intercept_dist}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ValueError(f"max_steps must be a positive integer, got {self.max_steps}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        object.__setattr__(self, "dims", int(self.dims))
        object.__setattr__(self, "max_steps", int(self.max_steps))
        object.__setattr__(self, "size", float(self.size))
        object.__setattr__(self, "intercept_dist", float(self.intercept_dist))

    @property
    def pred_speed(self) -> float:
        """Maximum predator speed, the norm of the all-ones vector."""
        return math.sqrt(self.dims)

    @property
    def prey_speed(self) -> float:
        return 0.5 * math.sqrt(self.dims)

    @property
    def obs_dim(self) -> int:
        return 5 * self.dims


@dataclass
class EnvState:
    pred_pos: np.ndarray
    pred_vel: np.ndarray
    prey_pos: np.ndarray
    prey_vel: np.ndarray
    step_count: int = 0
    prey_fixed_dir: np.ndarray | None = None
    done: bool = False

    def copy(self) -> "EnvState":
        return EnvState(
            self.pred_pos.copy(),
            self.pred_vel.copy(),
            self.prey_pos.copy(),
            self.prey_vel.copy(),
            self.step_count,
            None if self.prey_fixed_dir is None else self.prey_fixed_dir.copy(),
            self.done,
        )


@dataclass
class GoalObservation:
    """Observation split into the part HER leaves alone and the two goals.

    ``state`` is predator position, predator velocity and prey velocity;
    ``achieved_goal`` is the predator position; ``desired_goal`` the prey
    position.
    """

    state: np.ndarray
    achieved_goal: np.ndarray
    desired_goal: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.state, self.achieved_goal, self.desired_goal])

    @classmethod
    def from_flat(cls, flat: np.ndarray, dims: int) -> "GoalObservation":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (5 * dims,):
            raise ValueError(f"expected flat observation of length {5 * dims}, got {flat.shape}")
        return cls(flat[: 3 * dims], flat[3 * dims : 4 * dims], flat[4 * dims :])


def goal_slices(dims: int) -> tuple[slice, slice, slice]:
    """Index ranges of (state, achieved_goal, desired_goal) in a flat observation."""
    return slice(0, 3 * dims), slice(3 * dims, 4 * dims), slice(4 * dims, 5 * dims)


@dataclass
class StepOutcome:
    obs: GoalObservation
    reward: float
    terminated: bool
    truncated: bool
    info: dict = field(default_factory=dict)


def observe(state: EnvState) -> GoalObservation:
    return GoalObservation(
        np.concatenate([state.pred_pos, state.pred_vel, state.prey_vel]),
        state.pred_pos.copy(),
        state.prey_pos.copy(),
    )


def random_unit_vector(dims: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.standard_normal(dims)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def rotate_within_angle(direction: np.ndarray, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate a unit vector by ``theta`` radians within a random plane containing it.

    The second axis of the plane is drawn uniformly among unit vectors
    orthogonal to ``direction``. In one dimension the only possible results
    are ``direction`` and its negation.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    if not 0.0 <= theta <= math.pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    if direction.shape[0] == 1:
        return direction * (1.0 if math.cos(theta) >= 0 else -1.0)
    while True:
        v = rng.standard_normal(direction.shape[0])
        v -= np.dot(v, direction) * direction
        n = np.linalg.norm(v)
        if n > 1e-12:
            break
    ortho = v / n
    return math.cos(theta) * direction + math.sin(theta) * ortho


def _direction_or_random(vec: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = np.linalg.norm(vec)
    if n < 1e-12:
        log.debug("predator and prey coincide; using a random prey direction")
        return random_unit_vector(vec.shape[0], rng)
    return vec / n


def prey_velocity(
    policy: PreyPolicy, state: EnvState, cfg: EnvConfig, rng: np.random.Generator
) -> np.ndarray:
    """Velocity the prey wants to take this step (before wall clamping)."""
    policy = PreyPolicy(policy)
    speed = cfg.prey_speed
    if policy is PreyPolicy.STATIC:
        return np.zeros(cfg.dims)
    if policy is PreyPolicy.RANDOM:
        direction = random_unit_vector(cfg.dims, rng)
        return rng.uniform(0.0, speed) * direction
    if policy is PreyPolicy.RANDOM_DIRECTION:
        if state.prey_fixed_dir is None:
            raise ValueError("random_direction prey requires prey_fixed_dir in the state")
        return speed * state.prey_fixed_dir
    away = _direction_or_random(state.prey_pos - state.pred_pos, rng)
    if policy is PreyPolicy.STRAIGHT_AWAY:
        return speed * away
    if policy is PreyPolicy.REPEL:
        theta = abs(rng.uniform(-MAX_TURN_ANGLE, MAX_TURN_ANGLE))
        return speed * rotate_within_angle(away, theta, rng)
    if policy is PreyPolicy.ATTRACT:
        theta = rng.uniform(ATTRACT_MIN_ANGLE, MAX_TURN_ANGLE)
        return speed * rotate_within_angle(-away, theta, rng)
    raise ValueError(f"unknown prey policy {policy!r}")


def compute_reward(achieved, desired, cfg: EnvConfig, step_count: int) -> tuple[float, bool, bool]:
    """Sparse reward shared by live stepping and goal relabeling.

    Returns ``(reward, terminated, truncated)``; interception takes priority
    over the horizon.
    """
    a = np.asarray(achieved, dtype=np.float64)
    d = np.asarray(desired, dtype=np.float64)
    if kernels.distance(a, d) <= cfg.intercept_dist:
        return 1.0, True, False
    if step_count >= cfg.max_steps:
        return -1.0, False, True
    return 0.0, False, False


def reset(cfg: EnvConfig, rng: np.random.Generator) -> tuple[EnvState, GoalObservation]:
    d = cfg.dims
    if cfg.spawn_policy is SpawnPolicy.RANDOM:
        pred = rng.uniform(0.0, cfg.size, d)
        prey = rng.uniform(0.0, cfg.size, d)
    else:
        pred = np.zeros(d)
        prey = np.zeros(d)
        prey[-1] = cfg.size / 2
    fixed = random_unit_vector(d, rng) if cfg.prey_policy is PreyPolicy.RANDOM_DIRECTION else None
    state = EnvState(pred, np.zeros(d), prey, np.zeros(d), 0, fixed)
    return state, observe(state)


def step(
    state: EnvState, cfg: EnvConfig, action, rng: np.random.Generator
) -> tuple[EnvState, StepOutcome]:
    """Advance one step, mutating and returning ``state``.

    The predator moves first and interception is tested against the prey's
    current position; only then does a surviving prey move.
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (cfg.dims,):
        raise ValueError(f"action must have shape ({cfg.dims},), got {action.shape}")
    if state.done or state.step_count >= cfg.max_steps:
        raise RuntimeError("step() called on a finished episode; call reset() first")
    state.pred_vel = kernels.move_clamped(state.pred_pos, np.ascontiguousarray(action), cfg.size, 1.0)
    state.step_count += 1
    reward, terminated, truncated = compute_reward(state.pred_pos, state.prey_pos, cfg, state.step_count)
    if terminated:
        state.prey_vel = np.zeros(cfg.dims)
    else:
        vel = prey_velocity(cfg.prey_policy, state, cfg, rng)
        state.prey_vel = kernels.move_clamped(state.prey_pos, vel, cfg.size, 0.0)
    state.done = terminated or truncated
    return state, StepOutcome(observe(state), reward, terminated, truncated)


class PredatorPreyEnv:
    """Stateful wrapper holding a config, its state and a private random stream."""

    def __init__(self, cfg: EnvConfig | None = None, rng: np.random.Generator | None = None):
        self.cfg = cfg if cfg is not None else EnvConfig()
        self.rng = rng if rng is not None else np.random.default_rng(self.cfg.seed)
        self.state: EnvState | None = None

    @property
    def dims(self) -> int:
        return self.cfg.dims

    def reset(self) -> GoalObservation:
        self.state, obs = reset(self.cfg, self.rng)
        return obs

    def step(self, action) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        self.state, outcome = step(self.state, self.cfg, action, self.rng)
        return outcome

    def compute_reward(self, achieved, desired, step_count: int):
        return compute_reward(achieved, desired, self.cfg, step_count)
