import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdeil_lab.density import fit_conditional, fit_gaussian
from pdeil_lab.envs import EnvKind, Transition, expert_policy, rollout
from pdeil_lab.reward import (
    LOG_CLAMP,
    RewardModel,
    adaptive_simpson,
    policy_self_inner_product,
    reward_eval,
    reward_eval_batch,
)


@dataclass(frozen=True)
class ConstDensity:
    """Density stub returning the same log-density everywhere."""

    logp: float

    def logpdf(self, x):
        x = np.asarray(x)
        return self.logp if x.ndim <= 1 else np.full(len(x), self.logp)


@dataclass(frozen=True)
class ConstConditional:
    prob: float

    def log_prob(self, states, actions):
        return np.full(len(np.atleast_1d(actions)), math.log(self.prob) if self.prob > 0 else -np.inf)


S = np.zeros(2)


def joint_model(x_joint, x_expert, x_agent, alpha):
    return RewardModel(ConstDensity(math.log(x_expert)), ConstDensity(math.log(x_agent)), alpha, expert_joint=ConstDensity(math.log(x_joint)))


def test_equal_densities_give_one():
    assert reward_eval(joint_model(0.3, 0.3, 0.3, 0.5), S, 0.0) == pytest.approx(1.0, rel=1e-12)


def test_discrete_upper_bound_two_when_agent_density_vanishes():
    m = RewardModel(ConstDensity(-1.0), ConstDensity(-5000.0), 0.5, expert_conditional=ConstConditional(1.0))
    assert reward_eval(m, S, 0) == pytest.approx(2.0, rel=1e-12)


def test_alpha_zero_is_plain_ratio():
    m = joint_model(0.2, 0.5, 0.05, 0.0)
    assert reward_eval(m, S, 0.0) == pytest.approx(0.2 / 0.05, rel=1e-12)
    # expert state density plays no role at alpha = 0
    m2 = joint_model(0.2, 1e-9, 0.05, 0.0)
    assert reward_eval(m2, S, 0.0) == pytest.approx(4.0, rel=1e-12)


def test_alpha_one_uses_expert_state_only():
    m = joint_model(0.2, 0.5, 1e-300, 1.0)
    assert reward_eval(m, S, 0.0) == pytest.approx(0.4, rel=1e-12)


def test_alpha_validation_and_numerator_choice():
    with pytest.raises(ValueError):
        joint_model(1, 1, 1, 1.5)
    with pytest.raises(ValueError):
        RewardModel(ConstDensity(0), ConstDensity(0), 0.5)
    with pytest.raises(ValueError):
        RewardModel(ConstDensity(0), ConstDensity(0), 0.5, expert_joint=ConstDensity(0), expert_conditional=ConstConditional(1))
    m = joint_model(1, 1, 1, 0.25)
    assert m.alpha + m.beta == 1.0


def test_clamp_counts_misleading_events():
    m = joint_model(1.0, 1.0, 1.0, 0.0)
    m = RewardModel(m.expert_state, ConstDensity(-2000.0), 0.0, expert_joint=m.expert_joint)
    r, clamped = m.evaluate(np.zeros((4, 2)), np.zeros(4))
    assert clamped == 4
    np.testing.assert_allclose(r, math.exp(LOG_CLAMP))
    assert np.all(np.isfinite(r))


def test_misleading_reward_diverges_only_at_alpha_zero():
    ratios = []
    for log_agent in (-1.0, -5.0, -20.0, -50.0):
        eq4 = joint_model(0.3, 0.6, math.exp(log_agent), 0.0)
        eq6 = joint_model(0.3, 0.6, math.exp(log_agent), 0.5)
        ratios.append((reward_eval(eq4, S, 0.0), reward_eval(eq6, S, 0.0)))
    eq4_vals, eq6_vals = zip(*ratios)
    assert all(b > a for a, b in zip(eq4_vals, eq4_vals[1:]))
    assert eq4_vals[-1] > 1e20
    assert eq6_vals[-1] == pytest.approx(2 * 0.3 / 0.6, rel=1e-9)


def test_reward_strictly_decreasing_in_agent_density():
    for alpha in (0.0, 0.3, 0.5, 0.9):
        vals = [reward_eval(joint_model(0.4, 0.4, x, alpha), S, 0.0) for x in np.geomspace(1e-4, 10, 12)]
        assert all(b < a for a, b in zip(vals, vals[1:]))


def test_discrete_bound_randomized():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = rng.uniform(0, 1)
        m = RewardModel(ConstDensity(rng.normal() * 5), ConstDensity(rng.normal() * 5), 0.5, expert_conditional=ConstConditional(p))
        assert reward_eval(m, S, 0) <= 2 * p + 1e-12


def _fitted_models(rng):
    s_e = rng.normal(size=(300, 2))
    a_e = (s_e[:, 0] > 0).astype(int)
    s_a = rng.normal(size=(300, 2)) + 0.5
    return fit_gaussian(s_e), fit_conditional(s_e, a_e), fit_gaussian(s_a)


def test_batch_matches_loop_exactly():
    rng = np.random.default_rng(1)
    e_state, e_cond, agent = _fitted_models(rng)
    m = RewardModel(e_state, agent, 0.5, expert_conditional=e_cond)
    states = rng.normal(size=(100, 2)) * 2
    actions = rng.integers(0, 2, size=100)
    ts = [Transition(s, int(a), None, s, False) for s, a in zip(states, actions)]
    batch = reward_eval_batch(m, ts)
    loop = np.array([reward_eval(m, s, a) for s, a in zip(states, actions)])
    np.testing.assert_array_equal(batch, loop)
    assert reward_eval_batch(m, []).shape == (0,)
    assert reward_eval_batch(m, ts[:1])[0] == reward_eval(m, states[0], actions[0])


def test_batch_accepts_trajectory():
    kind = EnvKind.PENDULUM
    traj = rollout(kind, expert_policy(kind), 50, np.random.default_rng(0))
    joint = fit_gaussian(np.hstack([traj.states, traj.actions[:, None]]))
    state = fit_gaussian(traj.states)
    m = RewardModel(state, state, 0.5, expert_joint=joint)
    r = reward_eval_batch(m, traj)
    assert r.shape == (50,) and np.all(r >= 0)
    np.testing.assert_array_equal(r, reward_eval_batch(m, list(traj.transitions)))


# --- policy self inner product -------------------------------------------------


def test_discrete_inner_product_examples():
    assert policy_self_inner_product([0, 0, 1], None, 3) == 1.0
    assert policy_self_inner_product([1 / 3] * 3, None, 3) == pytest.approx(1 / 3)
    assert policy_self_inner_product(lambda a, s: [0.25, 0.75][a], None, 2) == pytest.approx(0.625)
    with pytest.raises(ValueError):
        policy_self_inner_product([0.5, 0.4], None, 2)


def _uniform(width, center=0.0):
    return lambda a, s: 1.0 / width if abs(a - center) <= width / 2 else 0.0


def _triangle(base, height, center=0.0):
    return lambda a, s: max(0.0, height * (1.0 - abs(a - center) / (base / 2)))


@pytest.mark.parametrize(
    "pi,expected",
    [(_uniform(2), 0.5), (_uniform(1), 1.0), (_uniform(0.5), 2.0), (_triangle(2, 1), 2 / 3), (_triangle(1, 2), 4 / 3)],
)
def test_continuous_inner_product_reference_shapes(pi, expected):
    assert policy_self_inner_product(pi, None, (-2.0, 2.0)) == pytest.approx(expected, abs=1e-6)


def test_continuous_rejects_unnormalized():
    with pytest.raises(ValueError):
        policy_self_inner_product(lambda a, s: 1.0, None, (-2.0, 2.0))


def test_adaptive_simpson_smooth_integrand():
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-9)
    assert adaptive_simpson(math.exp, -1.0, 1.0) == pytest.approx(math.e - 1 / math.e, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=10).filter(lambda v: sum(v) > 1e-3))
def test_inner_product_at_most_one(raw):
    p = np.asarray(raw) / np.sum(raw)
    val = policy_self_inner_product(p, None, len(p))
    assert val <= 1.0 + 1e-12
    if val >= 1.0 - 1e-12:
        assert np.isclose(p.max(), 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8), st.floats(1.01, 6.0))
def test_sharpening_never_decreases_inner_product(raw, k):
    p = np.asarray(raw) / np.sum(raw)
    q = p**k / np.sum(p**k)
    assert policy_self_inner_product(q, None, len(q)) >= policy_self_inner_product(p, None, len(p)) - 1e-12
