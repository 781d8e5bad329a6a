"""Density-ratio rewards recovered from demonstrations.

The reward for a state-action pair is

    r(s, a) = rho_e(s, a) / (alpha * rho_e(s) + (1 - alpha) * rho_agent(s))

with ``rho_e`` the expert's (joint or state) density and ``rho_agent`` the
agent's state density. ``alpha = 0`` gives the raw ratio, which blows up in
states the agent rarely visits; ``alpha = 0.5`` bounds the discrete-action
reward by 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .envs import Trajectory

LOG_CLAMP = 700.0


@dataclass(frozen=True)
class RewardModel:
    """Immutable bundle of fitted densities plus the trade-off ``alpha``.

    Exactly one of ``expert_joint`` (continuous actions, density over the
    concatenated ``[s, a]``) and ``expert_conditional`` (discrete actions,
    ``p(a | s)``) must be given. Density objects only need ``logpdf``;
    the conditional needs ``log_prob(states, actions)``.
    """

    expert_state: object
    agent_state: object
    alpha: float
    expert_joint: Optional[object] = None
    expert_conditional: Optional[object] = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if (self.expert_joint is None) == (self.expert_conditional is None):
            raise ValueError("give exactly one of expert_joint or expert_conditional")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    @property
    def discrete(self) -> bool:
        return self.expert_conditional is not None

    def log_numerator(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        if self.discrete:
            return np.atleast_1d(self.expert_state.logpdf(states)) + self.expert_conditional.log_prob(
                states, actions
            )
        joint = np.hstack([states, np.asarray(actions, dtype=np.float64).reshape(len(states), -1)])
        return np.atleast_1d(self.expert_joint.logpdf(joint))

    def log_denominator(self, states: np.ndarray) -> np.ndarray:
        if self.alpha == 1.0:
            return np.atleast_1d(self.expert_state.logpdf(states))
        log_agent = np.atleast_1d(self.agent_state.logpdf(states))
        if self.alpha == 0.0:
            return log_agent
        log_expert = np.atleast_1d(self.expert_state.logpdf(states))
        return np.logaddexp(math.log(self.alpha) + log_expert, math.log(self.beta) + log_agent)

    def evaluate(self, states, actions) -> tuple[np.ndarray, int]:
        """Rewards for a batch, plus the number of evaluations clamped from above.

        Upper clamps are the observable symptom of a misleading reward: the
        agent's own density estimate has vanished in the queried state.
        """
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if len(states) == 0:
            return np.zeros(0), 0
        exponent = self.log_numerator(states, actions) - self.log_denominator(states)
        clamped = int(np.count_nonzero(exponent > LOG_CLAMP))
        return np.exp(np.clip(exponent, -LOG_CLAMP, LOG_CLAMP)), clamped


def reward_eval(m: RewardModel, s, a) -> float:
    return float(m.evaluate(np.asarray(s, dtype=np.float64)[None, :], np.asarray([a]))[0][0])


def reward_eval_batch(m: RewardModel, transitions) -> np.ndarray:
    """Rewards for a :class:`Trajectory` or a sequence of :class:`Transition`."""
    if isinstance(transitions, Trajectory):
        return m.evaluate(transitions.states, transitions.actions)[0]
    transitions = list(transitions)
    if not transitions:
        return np.zeros(0)
    states = np.array([t.s for t in transitions], dtype=np.float64)
    actions = np.array([t.a for t in transitions])
    return m.evaluate(states, actions)[0]


def adaptive_simpson(
    f: Callable[[float], float], a: float, b: float, tol: float = 1e-8, max_depth: int = 50, panels: int = 64
) -> float:
    def simpson(lo, hi, f_lo, f_mid, f_hi):
        return (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)

    def recurse(lo, hi, f_lo, f_mid, f_hi, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        f_lm, f_rm = f(lm), f(rm)
        left = simpson(lo, mid, f_lo, f_lm, f_mid)
        right = simpson(mid, hi, f_mid, f_rm, f_hi)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * eps:
            return left + right + delta / 15.0
        return recurse(lo, mid, f_lo, f_lm, f_mid, left, eps / 2, depth - 1) + recurse(
            mid, hi, f_mid, f_rm, f_hi, right, eps / 2, depth - 1
        )

    # A uniform first pass keeps narrow bumps from slipping between the
    # five initial samples of a single panel.
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        f_lo, f_mid, f_hi = f(lo), f(0.5 * (lo + hi)), f(hi)
        total += recurse(lo, hi, f_lo, f_mid, f_hi, simpson(lo, hi, f_lo, f_mid, f_hi), tol / panels, max_depth)
    return total


def policy_self_inner_product(pi, s, action_space, tol: float = 1e-8) -> float:
    """``<pi(.|s), pi(.|s)>``: sum of squared probabilities, or the integral of
    the squared density over a bounded action interval.

    ``pi`` is either an array of probabilities (discrete only) or a callable
    ``pi(a, s)``. ``action_space`` is an int (number of discrete actions) or a
    ``(low, high)`` pair.
    """
    if isinstance(action_space, (int, np.integer)):
        if callable(pi):
            p = np.array([pi(a, s) for a in range(action_space)], dtype=np.float64)
        else:
            p = np.asarray(pi, dtype=np.float64)
        if len(p) != action_space or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("pi must be a normalized distribution over the actions")
        return float(np.dot(p, p))
    low, high = action_space
    mass = adaptive_simpson(lambda a: pi(a, s), low, high, tol)
    if abs(mass - 1.0) > 1e-6:
        raise ValueError(f"pi integrates to {mass:.8f} over the action interval, not 1")
    return adaptive_simpson(lambda a: pi(a, s) ** 2, low, high, tol)
