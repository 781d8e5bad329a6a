import numpy as np
import pytest

from pdeil_lab.tabular import (
    TabularMDP,
    TabularPolicy,
    brute_force_optimal,
    brute_force_self_consistent,
    enumerate_deterministic,
    exact_pdeil_reward,
    objective,
    occupancy,
    policy_value,
    random_deterministic_policy,
    random_mdp,
    random_policy,
    self_consistent_objective,
    theorem2_sweep,
    value_iteration,
    verify_theorem2,
)


def chain_mdp(gamma=0.9):
    """3-state chain: action 0 moves right (last state absorbs), action 1 stays."""
    P = np.zeros((3, 2, 3))
    P[0, 0, 1] = P[1, 0, 2] = P[2, 0, 2] = 1.0
    for s in range(3):
        P[s, 1, s] = 1.0
    return TabularMDP(P, gamma, np.array([1.0, 0.0, 0.0]))


def test_validation():
    with pytest.raises(ValueError):
        TabularMDP(np.full((2, 2, 2), 0.6), 0.9, np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        TabularMDP(np.full((2, 2, 2), 0.5), 1.0, np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        TabularPolicy(np.array([[0.5, 0.6]]))
    assert TabularPolicy.deterministic([1, 0], 2).is_deterministic
    assert not TabularPolicy(np.array([[0.5, 0.5]])).is_deterministic


def test_occupancy_single_absorbing_state():
    mdp = TabularMDP(np.ones((1, 1, 1)), 0.9, np.array([1.0]))
    np.testing.assert_allclose(occupancy(mdp, TabularPolicy(np.ones((1, 1)))), [10.0])


def test_occupancy_normalization_and_power_series():
    rng = np.random.default_rng(0)
    for _ in range(50):
        S, A = int(rng.integers(2, 7)), int(rng.integers(2, 5))
        # gamma <= 0.9 keeps the 200-step truncation error below 1e-8
        mdp = random_mdp(rng, S, A, float(rng.uniform(0.5, 0.9)))
        pi = random_policy(rng, S, A)
        rho = occupancy(mdp, pi)
        assert rho.sum() == pytest.approx(1 / (1 - mdp.gamma), abs=1e-9)
        assert np.all(rho >= 0)
        if S == 5:
            P = np.einsum("sa,sat->st", pi.probs, mdp.transition)
            p, ref = mdp.initial_dist.copy(), np.zeros(S)
            for t in range(201):
                ref += mdp.gamma**t * p
                p = p @ P
            np.testing.assert_allclose(rho, ref, atol=1e-6)


def test_occupancy_matches_monte_carlo():
    rng = np.random.default_rng(1)
    mdp = random_mdp(rng, 4, 3, 0.8)
    pi = random_policy(rng, 4, 3)
    rho = occupancy(mdp, pi)
    n, horizon = 20000, 80
    visits = np.zeros((n, 4))
    sim = np.random.default_rng(2)
    s = sim.choice(4, size=n, p=mdp.initial_dist)
    cum_pi = np.cumsum(pi.probs, axis=1)
    cum_P = np.cumsum(mdp.transition, axis=2)
    for t in range(horizon):
        visits[np.arange(n), s] += mdp.gamma**t
        a = np.minimum((sim.random(n)[:, None] > cum_pi[s]).sum(axis=1), 2)
        s = np.minimum((sim.random(n)[:, None] > cum_P[s, a]).sum(axis=1), 3)
    est = visits.mean(axis=0)
    se = visits.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(est - rho) <= 3 * se + mdp.gamma**horizon / (1 - mdp.gamma))


def test_reward_agent_equals_expert():
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, 5, 3, 0.9)
    expert = random_deterministic_policy(rng, 5, 3)
    reach = occupancy(mdp, expert) > 1e-12
    for alpha in (0.0, 0.5):
        r = exact_pdeil_reward(mdp, expert, expert, alpha)
        np.testing.assert_allclose(r[reach], expert.probs[reach], atol=1e-12)


def test_reward_on_hand_solved_chain():
    mdp = chain_mdp(0.9)
    expert = TabularPolicy.deterministic([0, 0, 1], 2)  # walk right
    agent = TabularPolicy(np.full((3, 2), 0.5))
    # expert: 1, 0.9, 0.81/(1-0.9) = 8.1
    np.testing.assert_allclose(occupancy(mdp, expert), [1.0, 0.9, 8.1], atol=1e-12)
    # uniform agent: rho0 = 1/(1-0.45), rho1 = 0.45 rho0/(1-0.45), rho2 = (0.45 rho1)/(1-0.9)
    rho0 = 1 / 0.55
    rho1 = 0.45 * rho0 / 0.55
    rho2 = 0.45 * rho1 / 0.1
    np.testing.assert_allclose(occupancy(mdp, agent), [rho0, rho1, rho2], atol=1e-12)
    r = exact_pdeil_reward(mdp, expert, agent, 0.0)
    np.testing.assert_allclose(r[:, 0], [1 / rho0, 0.9 / rho1, 0.0], atol=1e-12)
    np.testing.assert_allclose(r[:, 1], [0.0, 0.0, 8.1 / rho2], atol=1e-12)


def test_unreachable_states_get_zero_and_are_flagged():
    P = np.zeros((3, 2, 3))
    P[:, :, 0] = 1.0  # every action returns to state 0
    mdp = TabularMDP(P, 0.9, np.array([1.0, 0.0, 0.0]))
    pi = TabularPolicy(np.full((3, 2), 0.5))
    r, flags = exact_pdeil_reward(mdp, pi, pi, 0.0, return_flags=True)
    np.testing.assert_array_equal(flags, [False, True, True])
    np.testing.assert_array_equal(r[1:], 0.0)


def test_value_iteration_simple_cases():
    rng = np.random.default_rng(4)
    mdp = random_mdp(rng, 4, 3, 0.9)
    r = np.zeros((4, 3))
    r[:, 0] = 1.0
    pi, V = value_iteration(mdp, r)
    np.testing.assert_array_equal(pi.greedy, 0)
    np.testing.assert_allclose(V, 10.0, atol=1e-8)
    myopic = TabularMDP(mdp.transition, 1e-6, mdp.initial_dist)
    r = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(value_iteration(myopic, r)[0].greedy, r.argmax(axis=1))
    # exact ties go to the lowest index
    np.testing.assert_array_equal(value_iteration(mdp, np.ones((4, 3)))[0].greedy, 0)


def test_value_iteration_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(30):
        S, A = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        if A**S > 1024:
            continue
        mdp = random_mdp(rng, S, A, float(rng.uniform(0.5, 0.95)))
        r = rng.normal(size=(S, A))
        pi, _ = value_iteration(mdp, r)
        best, best_val = brute_force_optimal(mdp, r)
        assert objective(mdp, pi, r) == pytest.approx(best_val, abs=1e-8)
        assert any(np.array_equal(pi.greedy, b) for b in best) or objective(mdp, pi, r) >= best_val - 1e-8


def test_policy_value_consistent_with_objective():
    rng = np.random.default_rng(6)
    mdp = random_mdp(rng, 4, 2, 0.8)
    pi = random_policy(rng, 4, 2)
    r = rng.normal(size=(4, 2))
    assert mdp.initial_dist @ policy_value(mdp, pi, r) == pytest.approx(objective(mdp, pi, r), abs=1e-10)


def test_enumeration_size():
    assert enumerate_deterministic(3, 2).shape == (8, 3)
    assert len({tuple(x) for x in enumerate_deterministic(4, 3)}) == 81


def test_verify_theorem2_random_trials():
    rng = np.random.default_rng(7)
    for _ in range(60):
        S, A = int(rng.integers(2, 7)), int(rng.integers(2, 5))
        mdp = random_mdp(rng, S, A, float(rng.uniform(0.5, 0.99)))
        expert = random_deterministic_policy(rng, S, A)
        rep = verify_theorem2(mdp, expert, random_policy(rng, S, A), 0.0)
        assert rep.match and rep.expert_deterministic
        assert rep.J_expert >= rep.J_agent - 1e-9
        assert rep.J_optimal == pytest.approx(rep.J_expert, abs=1e-9)


def test_j_ordering_over_random_policies():
    rng = np.random.default_rng(8)
    mdp = random_mdp(rng, 5, 3, 0.9)
    expert = random_deterministic_policy(rng, 5, 3)
    r_fixed = exact_pdeil_reward(mdp, expert, expert, 0.0)
    j_e = self_consistent_objective(mdp, expert, expert)
    assert j_e == pytest.approx(1 / (1 - mdp.gamma), abs=1e-9)
    for _ in range(100):
        pi = random_policy(rng, 5, 3)
        assert self_consistent_objective(mdp, expert, pi) <= j_e + 1e-9
        assert objective(mdp, pi, r_fixed) <= objective(mdp, expert, r_fixed) + 1e-9


def test_brute_force_self_consistent_agrees():
    rng = np.random.default_rng(9)
    mdp = random_mdp(rng, 4, 3, 0.9)
    expert = random_deterministic_policy(rng, 4, 3)
    best, val = brute_force_self_consistent(mdp, expert)
    reach = occupancy(mdp, expert) > 1e-12
    assert all(np.array_equal(b[reach], expert.greedy[reach]) for b in best)
    assert val == pytest.approx(1 / (1 - mdp.gamma), abs=1e-9)


def test_stochastic_expert_is_reported_not_asserted():
    rng = np.random.default_rng(10)
    mdp = random_mdp(rng, 3, 2, 0.9)
    expert = random_policy(rng, 3, 2)
    rep = verify_theorem2(mdp, expert, random_policy(rng, 3, 2), 0.0)
    assert not rep.expert_deterministic
    assert isinstance(rep.match, bool)
    assert set(rep.row()) >= {"match", "J_optimal", "J_expert"}


def test_sweep_summary_small():
    res = theorem2_sweep(40, seed=1, policies_per_mdp=5)
    assert res.trials == 40 and res.passed
    assert res.brute_force_checked > 0 and len(res.rows) == 40
    assert 0 <= res.fixed_agent_matches <= 40
