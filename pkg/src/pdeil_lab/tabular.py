"""Exact finite-MDP checks of the density-ratio reward.

Occupancies are obtained by a direct linear solve, so the reward
``rho_e(s) pi_e(a|s) / (alpha rho_e(s) + (1 - alpha) rho_agent(s))`` can be
built without estimation error and the resulting optimal policy compared
against the expert.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

REACH_EPS = 1e-12


@dataclass(frozen=True)
class TabularMDP:
    transition: np.ndarray  # P[s, a, s']
    gamma: float
    initial_dist: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=np.float64)
        D = np.asarray(self.initial_dist, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or D.shape != (P.shape[0],):
            raise ValueError("transition must be (S, A, S) and initial_dist (S,)")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be probability vectors")
        if np.any(D < 0) or abs(D.sum() - 1.0) > 1e-12:
            raise ValueError("initial_dist must be a probability vector")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial_dist", D)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class TabularPolicy:
    probs: np.ndarray  # pi[s, a]

    def __post_init__(self):
        pi = np.asarray(self.probs, dtype=np.float64)
        if pi.ndim != 2 or np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", pi)

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "TabularPolicy":
        return cls(np.eye(n_actions)[np.asarray(actions, dtype=np.int64)])

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    @property
    def greedy(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float) -> TabularMDP:
    """Dirichlet(1) transition rows and initial distribution."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    D = rng.dirichlet(np.ones(n_states))
    # renormalize to kill the last-ulp drift in the Dirichlet sampler
    P /= P.sum(axis=2, keepdims=True)
    D /= D.sum()
    return TabularMDP(P, gamma, D)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> TabularPolicy:
    pi = rng.dirichlet(np.ones(n_actions), size=n_states)
    return TabularPolicy(pi / pi.sum(axis=1, keepdims=True))


def random_deterministic_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> TabularPolicy:
    return TabularPolicy.deterministic(rng.integers(0, n_actions, size=n_states), n_actions)


def state_transition(mdp: TabularMDP, pi: TabularPolicy) -> np.ndarray:
    return np.einsum("sa,sat->st", pi.probs, mdp.transition)


def occupancy(mdp: TabularMDP, pi: TabularPolicy) -> np.ndarray:
    """Discounted state occupancy: solves ``(I - gamma P_pi^T) rho = D``."""
    P_pi = state_transition(mdp, pi)
    A = np.eye(mdp.n_states) - mdp.gamma * P_pi.T
    rho = np.linalg.solve(A, mdp.initial_dist)
    # tiny negative values are round-off on unreachable states
    return np.maximum(rho, 0.0)


def exact_pdeil_reward(
    mdp: TabularMDP, expert: TabularPolicy, agent: TabularPolicy, alpha: float, return_flags: bool = False
):
    """``r[s, a]`` from exact occupancies.

    States unreachable under both policies get reward 0; ``return_flags``
    additionally returns the boolean mask of those states.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    rho_e = occupancy(mdp, expert)
    rho_a = occupancy(mdp, agent)
    denom = alpha * rho_e + (1.0 - alpha) * rho_a
    undefined = denom <= 0.0
    ratio = np.divide(rho_e, denom, out=np.zeros_like(rho_e), where=~undefined)
    r = ratio[:, None] * expert.probs
    return (r, undefined) if return_flags else r


def policy_value(mdp: TabularMDP, pi: TabularPolicy, r: np.ndarray) -> np.ndarray:
    """State values of ``pi`` under reward ``r[s, a]``."""
    r_pi = np.sum(pi.probs * r, axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * state_transition(mdp, pi), r_pi)


def objective(mdp: TabularMDP, pi: TabularPolicy, r: np.ndarray) -> float:
    """``J(pi) = sum_s rho_pi(s) sum_a pi(a|s) r(s, a)``."""
    return float(occupancy(mdp, pi) @ np.sum(pi.probs * r, axis=1))


def self_consistent_objective(mdp: TabularMDP, expert: TabularPolicy, pi: TabularPolicy, alpha: float = 0.0) -> float:
    """``J(pi)`` where the reward is built from ``pi``'s own occupancy."""
    return objective(mdp, pi, exact_pdeil_reward(mdp, expert, pi, alpha))


def value_iteration(mdp: TabularMDP, r: np.ndarray, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Greedy policy from converged Q; ties go to the lowest action index."""
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    P = mdp.transition
    V = np.zeros(mdp.n_states)
    Q = r + mdp.gamma * P @ V
    for _ in range(max_iter):
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
        Q = r + mdp.gamma * P @ V
    Q = r + mdp.gamma * P @ V
    # treat near-ties (within a few ulps of the value scale) as exact ties
    scale = max(1.0, float(np.max(np.abs(Q))))
    best = Q.max(axis=1, keepdims=True)
    greedy = np.argmax(Q >= best - 1e-12 * scale, axis=1)
    return TabularPolicy.deterministic(greedy, mdp.n_actions), V


def enumerate_deterministic(n_states: int, n_actions: int) -> np.ndarray:
    """Every deterministic policy as a row of actions, shape ``(A**S, S)``."""
    return np.array(list(itertools.product(range(n_actions), repeat=n_states)), dtype=np.int64)


def _batched_occupancy(mdp: TabularMDP, actions: np.ndarray) -> np.ndarray:
    S = mdp.n_states
    P_pi = mdp.transition[np.arange(S)[None, :], actions]  # (K, S, S')
    A = np.eye(S)[None] - mdp.gamma * np.transpose(P_pi, (0, 2, 1))
    b = np.broadcast_to(mdp.initial_dist, (len(actions), S))[..., None]
    return np.maximum(np.linalg.solve(A, b)[..., 0], 0.0)


def _argmax_set(actions: np.ndarray, values: np.ndarray, tol: float = 1e-10):
    best_val = float(values.max())
    return [a for a in actions[values >= best_val - tol]], best_val


def brute_force_optimal(mdp: TabularMDP, r: np.ndarray):
    """All deterministic policies maximizing ``J`` under a fixed reward."""
    actions = enumerate_deterministic(mdp.n_states, mdp.n_actions)
    rho = _batched_occupancy(mdp, actions)
    r_taken = np.asarray(r)[np.arange(mdp.n_states)[None, :], actions]
    return _argmax_set(actions, np.sum(rho * r_taken, axis=1))


def brute_force_self_consistent(mdp: TabularMDP, expert: TabularPolicy, alpha: float = 0.0):
    """Maximizers of the self-consistent objective over deterministic policies."""
    actions = enumerate_deterministic(mdp.n_states, mdp.n_actions)
    rho_e = occupancy(mdp, expert)
    rho = _batched_occupancy(mdp, actions)
    denom = alpha * rho_e[None, :] + (1.0 - alpha) * rho
    ratio = np.divide(rho_e[None, :], denom, out=np.zeros_like(rho), where=denom > 0)
    pe_taken = expert.probs[np.arange(mdp.n_states)[None, :], actions]
    return _argmax_set(actions, np.sum(rho * ratio * pe_taken, axis=1))


@dataclass
class Theorem2Report:
    match: bool
    optimal_policy: np.ndarray
    expert_actions: np.ndarray
    reachable: np.ndarray
    J_optimal: float
    J_expert: float
    J_agent: float
    fixed_agent_match: bool
    fixed_agent_policy: np.ndarray
    expert_deterministic: bool
    undefined_states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def row(self) -> dict:
        return {
            "match": int(self.match),
            "fixed_agent_match": int(self.fixed_agent_match),
            "expert_deterministic": int(self.expert_deterministic),
            "n_reachable": int(self.reachable.sum()),
            "J_optimal": self.J_optimal,
            "J_expert": self.J_expert,
            "J_agent": self.J_agent,
        }


def verify_theorem2(mdp: TabularMDP, expert: TabularPolicy, agent: TabularPolicy, alpha: float = 0.0) -> Theorem2Report:
    """Check that the expert is optimal for the density-ratio reward.

    The optimality claim concerns the objective in which the reward uses the
    evaluated policy's own occupancy. At the point where the agent's
    occupancy matches the expert's, that reward is a fixed MDP reward, so the
    optimal policy is found by value iteration on the reward built with the
    expert's occupancy in the denominator. ``J_*`` values are that
    self-consistent objective.

    ``fixed_agent_*`` reports value iteration on the reward built from the
    supplied agent's occupancy (one reward-refit step away from the agent).
    The expert need not be optimal there; it is recorded, not asserted.
    """
    rho_e = occupancy(mdp, expert)
    reachable = rho_e > REACH_EPS
    expert_actions = expert.greedy
    r_star = exact_pdeil_reward(mdp, expert, expert, alpha)
    pi_star, _ = value_iteration(mdp, r_star)
    match = bool(np.all(pi_star.greedy[reachable] == expert_actions[reachable]))
    r_agent, undefined = exact_pdeil_reward(mdp, expert, agent, alpha, return_flags=True)
    pi_fixed, _ = value_iteration(mdp, r_agent)
    fixed_match = bool(np.all(pi_fixed.greedy[reachable] == expert_actions[reachable]))
    return Theorem2Report(
        match=match,
        optimal_policy=pi_star.greedy,
        expert_actions=expert_actions,
        reachable=reachable,
        J_optimal=self_consistent_objective(mdp, expert, pi_star, alpha),
        J_expert=self_consistent_objective(mdp, expert, expert, alpha),
        J_agent=self_consistent_objective(mdp, expert, agent, alpha),
        fixed_agent_match=fixed_match,
        fixed_agent_policy=pi_fixed.greedy,
        expert_deterministic=expert.is_deterministic,
        undefined_states=undefined,
    )


@dataclass
class SweepResult:
    trials: int
    matches: int
    fixed_agent_matches: int
    brute_force_checked: int
    brute_force_agree: int
    j_violations: int
    rows: list

    @property
    def passed(self) -> bool:
        return (
            self.matches == self.trials
            and self.brute_force_agree == self.brute_force_checked
            and self.j_violations == 0
        )


def theorem2_sweep(
    trials: int,
    seed: int,
    alpha: float = 0.0,
    max_states: int = 6,
    max_actions: int = 4,
    min_states: int = 2,
    min_actions: int = 2,
    gamma_range=(0.5, 0.99),
    brute_force_limit: int = 1024,
    policies_per_mdp: int = 0,
) -> SweepResult:
    """Random-MDP trials of :func:`verify_theorem2`.

    When ``n_actions ** n_states <= brute_force_limit`` the self-consistent
    objective is also maximized by exhaustive enumeration and every maximizer
    must agree with the expert on expert-reachable states.
    """
    rng = np.random.default_rng(seed)
    rows = []
    matches = fixed = bf_checked = bf_agree = j_viol = 0
    for i in range(trials):
        S = int(rng.integers(min_states, max_states + 1))
        A = int(rng.integers(min_actions, max_actions + 1))
        gamma = float(rng.uniform(*gamma_range))
        mdp = random_mdp(rng, S, A, gamma)
        expert = random_deterministic_policy(rng, S, A)
        agent = random_policy(rng, S, A)
        rep = verify_theorem2(mdp, expert, agent, alpha)
        matches += rep.match
        fixed += rep.fixed_agent_match
        row = {"trial": i, "n_states": S, "n_actions": A, "gamma": gamma, **rep.row()}
        if A**S <= brute_force_limit:
            bf_checked += 1
            best, _ = brute_force_self_consistent(mdp, expert, alpha)
            ok = all(np.all(b[rep.reachable] == rep.expert_actions[rep.reachable]) for b in best)
            bf_agree += ok
            row["brute_force_agree"] = int(ok)
        for _ in range(policies_per_mdp):
            pi = random_policy(rng, S, A)
            if self_consistent_objective(mdp, expert, pi, alpha) > rep.J_expert + 1e-9:
                j_viol += 1
        rows.append(row)
    return SweepResult(trials, matches, fixed, bf_checked, bf_agree, j_viol, rows)
