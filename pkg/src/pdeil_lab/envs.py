"""Classic-control environments, scripted experts and rollout collection.

Both environments are implemented natively (no gym dependency) and are pure
functions of ``(state, action)``; episode time limits live in the rollout
loop.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np


class EnvKind(str, enum.Enum):
    CARTPOLE = "CartPole"
    PENDULUM = "Pendulum"

    @classmethod
    def parse(cls, name: "str | EnvKind") -> "EnvKind":
        if isinstance(name, EnvKind):
            return name
        for kind in cls:
            if kind.value.lower() == str(name).lower():
                return kind
        raise ValueError(f"unknown environment {name!r}")

    @property
    def discrete(self) -> bool:
        return self is EnvKind.CARTPOLE

    @property
    def state_dim(self) -> int:
        return 4 if self is EnvKind.CARTPOLE else 3

    @property
    def n_actions(self) -> int:
        """Number of discrete actions (CartPole only)."""
        if not self.discrete:
            raise AttributeError("Pendulum has a continuous action space")
        return 2

    @property
    def action_bound(self) -> float:
        """Symmetric torque bound (Pendulum only)."""
        if self.discrete:
            raise AttributeError("CartPole has a discrete action space")
        return PENDULUM_MAX_TORQUE

    @property
    def max_episode_steps(self) -> int:
        return 500 if self is EnvKind.CARTPOLE else 200


# CartPole constants
GRAVITY = 9.8
MASSCART = 1.0
MASSPOLE = 0.1
TOTAL_MASS = MASSCART + MASSPOLE
HALF_LENGTH = 0.5
POLEMASS_LENGTH = MASSPOLE * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4

# Pendulum constants
PENDULUM_G = 10.0
PENDULUM_M = 1.0
PENDULUM_L = 1.0
PENDULUM_DT = 0.05
PENDULUM_MAX_SPEED = 8.0
PENDULUM_MAX_TORQUE = 2.0
PENDULUM_MIN_REWARD = -(math.pi**2 + 0.1 * PENDULUM_MAX_SPEED**2 + 0.001 * PENDULUM_MAX_TORQUE**2)


def angle_normalize(theta: float) -> float:
    return ((theta + math.pi) % (2 * math.pi)) - math.pi


def env_reset(kind: EnvKind, rng: np.random.Generator) -> np.ndarray:
    if kind is EnvKind.CARTPOLE:
        return rng.uniform(-0.05, 0.05, size=4)
    theta = rng.uniform(-math.pi, math.pi)
    theta_dot = rng.uniform(-1.0, 1.0)
    return np.array([math.cos(theta), math.sin(theta), theta_dot])


def check_action(kind: EnvKind, a) -> None:
    if kind.discrete:
        if int(a) != a or int(a) not in (0, 1):
            raise ValueError(f"CartPole action must be 0 or 1, got {a!r}")
    else:
        u = float(np.asarray(a).reshape(-1)[0])
        if not (-PENDULUM_MAX_TORQUE <= u <= PENDULUM_MAX_TORQUE) or math.isnan(u):
            raise ValueError(f"Pendulum torque must lie in [-2, 2], got {u!r}")


def _cartpole_step(s, a: int):
    x, x_dot, theta, theta_dot = s
    force = FORCE_MAG if a == 1 else -FORCE_MAG
    costheta = math.cos(theta)
    sintheta = math.sin(theta)
    temp = (force + POLEMASS_LENGTH * theta_dot**2 * sintheta) / TOTAL_MASS
    thetaacc = (GRAVITY * sintheta - costheta * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASSPOLE * costheta**2 / TOTAL_MASS)
    )
    xacc = temp - POLEMASS_LENGTH * thetaacc * costheta / TOTAL_MASS
    x = x + TAU * x_dot
    x_dot = x_dot + TAU * xacc
    theta = theta + TAU * theta_dot
    theta_dot = theta_dot + TAU * thetaacc
    done = x < -X_LIMIT or x > X_LIMIT or theta < -THETA_LIMIT or theta > THETA_LIMIT
    return np.array([x, x_dot, theta, theta_dot]), 1.0, bool(done)


def _pendulum_step(s, u: float):
    cos_th, sin_th, th_dot = s
    th = math.atan2(sin_th, cos_th)
    reward = -(angle_normalize(th) ** 2 + 0.1 * th_dot**2 + 0.001 * u**2)
    new_th_dot = th_dot + (
        3 * PENDULUM_G / (2 * PENDULUM_L) * math.sin(th) + 3.0 / (PENDULUM_M * PENDULUM_L**2) * u
    ) * PENDULUM_DT
    new_th_dot = min(max(new_th_dot, -PENDULUM_MAX_SPEED), PENDULUM_MAX_SPEED)
    new_th = th + new_th_dot * PENDULUM_DT
    return np.array([math.cos(new_th), math.sin(new_th), new_th_dot]), reward, False


def env_step(kind: EnvKind, s, a, check: bool = True):
    """Advance one step. Returns ``(s_next, r_true, terminated)``.

    ``terminated`` only reflects the physics (CartPole bounds); the episode
    time limit is applied by :func:`rollout`.
    """
    if check:
        check_action(kind, a)
    if kind is EnvKind.CARTPOLE:
        return _cartpole_step(s, int(a))
    return _pendulum_step(s, float(np.asarray(a).reshape(-1)[0]))


# Pendulum swing-up controller gains, frozen after tuning (see tests).
SWING_GAIN = 4.0
PD_KP = 12.0
PD_KD = 3.0
CATCH_COS = 0.85


def scripted_expert_action(kind: EnvKind, s):
    if kind is EnvKind.CARTPOLE:
        x, x_dot, theta, theta_dot = s
        return 1 if (theta + 0.5 * theta_dot + 0.05 * x + 0.1 * x_dot) > 0 else 0
    cos_th, sin_th, th_dot = s
    th = math.atan2(sin_th, cos_th)
    # energy relative to upright rest: E = 0.5 w^2 + 15 (cos th - 1), dE/dt = 3 u w
    energy = 0.5 * th_dot**2 + 1.5 * PENDULUM_G / PENDULUM_L * (cos_th - 1.0)
    if cos_th > CATCH_COS:
        u = -(PD_KP * th + PD_KD * th_dot)
    else:
        u = -SWING_GAIN * energy * th_dot
        if abs(u) < 1e-3:
            # at rest hanging down: kick to break symmetry
            u = PENDULUM_MAX_TORQUE
    return min(max(u, -PENDULUM_MAX_TORQUE), PENDULUM_MAX_TORQUE)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: object
    r_true: Optional[float]
    s_next: np.ndarray
    done: bool
    truncated: bool = False


@dataclass
class Trajectory:
    """A fixed-length segment of interaction, possibly spanning episodes.

    ``dones[i]`` marks the end of an episode at step ``i`` (termination or
    time limit); ``truncated[i]`` is set when the end was the time limit.
    """

    kind: EnvKind
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray
    rewards: Optional[np.ndarray] = None
    seed: Optional[int] = None
    episode_returns: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def transitions(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield Transition(
                self.states[i],
                self.actions[i],
                None if self.rewards is None else float(self.rewards[i]),
                self.next_states[i],
                bool(self.dones[i]),
                bool(self.truncated[i]),
            )


Policy = Callable[[np.ndarray, np.random.Generator], object]


def expert_policy(kind: EnvKind) -> Policy:
    return lambda s, rng: scripted_expert_action(kind, s)


def rollout(
    kind: EnvKind,
    policy: Policy,
    max_steps: int,
    rng: np.random.Generator,
    record_true_reward: bool = True,
    seed: Optional[int] = None,
) -> Trajectory:
    """Run ``policy`` for exactly ``max_steps`` steps, resetting on episode end.

    ``episode_returns`` collects the ground-truth return of every episode
    completed inside the segment.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    dim = kind.state_dim
    states = np.empty((max_steps, dim))
    next_states = np.empty((max_steps, dim))
    actions = np.empty(max_steps, dtype=np.int64 if kind.discrete else np.float64)
    rewards = np.empty(max_steps)
    dones = np.zeros(max_steps, dtype=bool)
    truncated = np.zeros(max_steps, dtype=bool)
    limit = kind.max_episode_steps
    returns = []

    s = env_reset(kind, rng)
    t = 0
    ep_ret = 0.0
    for i in range(max_steps):
        a = policy(s, rng)
        s_next, r, term = env_step(kind, s, a)
        t += 1
        ep_ret += r
        states[i] = s
        actions[i] = a
        next_states[i] = s_next
        rewards[i] = r
        if term or t >= limit:
            dones[i] = True
            truncated[i] = not term
            returns.append(ep_ret)
            s = env_reset(kind, rng)
            t = 0
            ep_ret = 0.0
        else:
            s = s_next
    return Trajectory(
        kind,
        states,
        actions,
        next_states,
        dones,
        truncated,
        rewards if record_true_reward else None,
        seed,
        returns if record_true_reward else [],
    )


def run_episode(kind: EnvKind, policy: Policy, rng: np.random.Generator) -> float:
    """Play one episode up to the time limit and return its ground-truth return."""
    s = env_reset(kind, rng)
    total = 0.0
    for _ in range(kind.max_episode_steps):
        s, r, term = env_step(kind, s, policy(s, rng), check=False)
        total += r
        if term:
            break
    return total
