import numpy as np
import pytest

from pfedrl.envs import GarnetSpec, build_garnet, random_policy
from pfedrl.mdp import (
    ChainSampler,
    Mdp,
    Policy,
    ReducibleChainError,
    exact_q_value,
    exact_value,
    inverse_cdf,
    load_mdp,
    optimal_q_value,
    reward_under_policy,
    sample_step,
    save_mdp,
    stationary_distribution,
    transition_under_policy,
)


def _chain_mdp(p, rewards=None, gamma=0.9):
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    reward = np.zeros((n, 1)) if rewards is None else np.asarray(rewards, dtype=float).reshape(n, 1)
    return Mdp(p[:, None, :], reward, gamma)


class TestMdpValidation:
    def test_rejects_non_stochastic_rows(self):
        with pytest.raises(ValueError, match="sum to 1"):
            Mdp(np.array([[[0.5, 0.4]], [[0.0, 1.0]]]), np.zeros((2, 1)), 0.9)

    def test_rejects_negative_entries(self):
        with pytest.raises(ValueError, match="negative"):
            Mdp(np.array([[[1.5, -0.5]], [[0.0, 1.0]]]), np.zeros((2, 1)), 0.9)

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_gamma_outside_open_interval(self, gamma):
        with pytest.raises(ValueError, match="gamma"):
            _chain_mdp([[1.0]], gamma=gamma)

    def test_reward_shape_must_match(self):
        with pytest.raises(ValueError, match="reward shape"):
            Mdp(np.ones((2, 1, 2)) / 2, np.zeros((2, 2)), 0.9)

    def test_arrays_are_read_only(self, garnet):
        with pytest.raises(ValueError):
            garnet.kernel[0, 0, 0] = 1.0

    def test_policy_rows_must_be_distributions(self):
        with pytest.raises(ValueError):
            Policy(np.array([[0.7, 0.7]]))


class TestTransitionUnderPolicy:
    def test_deterministic_action_zero_selects_slice(self, garnet):
        policy = Policy.deterministic(np.zeros(garnet.n_states, dtype=int), garnet.n_actions)
        np.testing.assert_array_equal(transition_under_policy(garnet, policy), garnet.kernel[:, 0, :])

    def test_uniform_two_actions_is_mean(self, garnet):
        p = transition_under_policy(garnet, Policy.uniform(garnet.n_states, 2))
        np.testing.assert_allclose(p, (garnet.kernel[:, 0] + garnet.kernel[:, 1]) / 2, atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        mdp = build_garnet(GarnetSpec(5, 3, 5), rng)
        p = transition_under_policy(mdp, random_policy(5, 3, rng))
        assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-12

    def test_shape_mismatch(self, garnet):
        with pytest.raises(ValueError, match="policy shape"):
            transition_under_policy(garnet, Policy.uniform(3, 2))


class TestSampling:
    def test_deterministic_kernel_gives_unique_successor(self):
        mdp = _chain_mdp([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
        policy = Policy.uniform(3, 1)
        rng = np.random.default_rng(0)
        for s in range(3):
            for _ in range(20):
                assert sample_step(mdp, policy, s, rng).next_state == (s + 1) % 3

    def test_replay_is_identical(self, garnet):
        policy = Policy.uniform(garnet.n_states, garnet.n_actions)
        a = ChainSampler(garnet, policy, np.random.default_rng(11)).rollout(200)
        b = ChainSampler(garnet, policy, np.random.default_rng(11)).rollout(200)
        assert a == b

    def test_sampler_matches_sample_step_stream(self, garnet):
        policy = Policy.uniform(garnet.n_states, garnet.n_actions)
        sampler = ChainSampler(garnet, policy, np.random.default_rng(5))
        block = sampler.rollout(50)
        rng = np.random.default_rng(5)
        s = garnet.start_state
        for obs in block:
            ref = sample_step(garnet, policy, s, rng)
            assert ref == obs
            s = ref.next_state

    def test_each_step_consumes_two_uniforms(self, garnet):
        policy = Policy.uniform(garnet.n_states, garnet.n_actions)
        rng = np.random.default_rng(9)
        ChainSampler(garnet, policy, rng).rollout(7)
        ref = np.random.default_rng(9)
        ref.random(14)
        assert rng.random() == ref.random()

    def test_empirical_frequencies(self):
        p = np.array([[0.7, 0.3], [0.2, 0.8]])
        mdp = _chain_mdp(p)
        rng = np.random.default_rng(2024)
        counts = np.zeros((2, 2))
        for _ in range(50_000):
            for s in (0, 1):
                counts[s, sample_step(mdp, Policy.uniform(2, 1), s, rng).next_state] += 1
        freq = counts / counts.sum(axis=1, keepdims=True)
        assert np.max(np.abs(freq - p)) < 0.02

    def test_out_of_range_state(self, garnet):
        with pytest.raises(IndexError):
            sample_step(garnet, Policy.uniform(garnet.n_states, 2), garnet.n_states, np.random.default_rng())

    def test_inverse_cdf_skips_zero_mass_and_roundoff(self):
        assert inverse_cdf([0.0, 0.5, 1.0], 0.0) == 1
        assert inverse_cdf([0.5, 0.5, 1.0], 0.5) == 2
        assert inverse_cdf([0.3, 0.9999999999], 0.99999999999) == 1


class TestStationary:
    def test_symmetric(self):
        np.testing.assert_allclose(stationary_distribution(np.full((2, 2), 0.5)), [0.5, 0.5])

    def test_two_state_closed_form(self):
        np.testing.assert_allclose(stationary_distribution(np.array([[0.9, 0.1], [0.5, 0.5]])), [5 / 6, 1 / 6],
                                   atol=1e-12)

    def test_identity_is_reducible(self):
        with pytest.raises(ReducibleChainError):
            stationary_distribution(np.eye(3))

    def test_unichain_with_transient_state(self):
        mu = stationary_distribution(np.array([[0.0, 1.0, 0.0], [0.0, 0.5, 0.5], [0.0, 0.5, 0.5]]))
        np.testing.assert_allclose(mu, [0.0, 0.5, 0.5], atol=1e-12)

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            stationary_distribution(np.array([[0.5, 0.6], [0.5, 0.5]]))


class TestValues:
    def test_single_self_loop(self):
        np.testing.assert_allclose(exact_value(_chain_mdp([[1.0]], [1.0]), Policy.uniform(1, 1)), [10.0])

    def test_two_cycle(self):
        mdp = _chain_mdp([[0, 1], [1, 0]], [1.0, 0.0], gamma=0.5)
        np.testing.assert_allclose(exact_value(mdp, Policy.uniform(2, 1)), [4 / 3, 2 / 3], atol=1e-14)

    def test_zero_rewards(self, garnet):
        zero = Mdp(garnet.kernel, np.zeros_like(garnet.reward), garnet.gamma)
        policy = Policy.uniform(garnet.n_states, garnet.n_actions)
        np.testing.assert_array_equal(exact_value(zero, policy), 0.0)
        np.testing.assert_array_equal(exact_q_value(zero, policy), 0.0)

    def test_single_action_q_equals_v(self):
        mdp = _chain_mdp([[0.2, 0.8], [0.6, 0.4]], [1.0, -2.0])
        policy = Policy.uniform(2, 1)
        np.testing.assert_allclose(exact_q_value(mdp, policy)[:, 0], exact_value(mdp, policy))

    def test_v_is_policy_average_of_q(self):
        rng = np.random.default_rng(4)
        mdp = build_garnet(GarnetSpec(4, 3, 2), rng)
        policy = random_policy(4, 3, rng)
        v = exact_value(mdp, policy)
        q = exact_q_value(mdp, policy)
        assert np.max(np.abs(v - (policy.probs * q).sum(axis=1))) <= 1e-10

    def test_value_matches_iterative_evaluation(self, garnet):
        policy = Policy.uniform(garnet.n_states, garnet.n_actions)
        p, r = transition_under_policy(garnet, policy), reward_under_policy(garnet, policy)
        v = np.zeros(garnet.n_states)
        for _ in range(2000):
            v = r + garnet.gamma * p @ v
        np.testing.assert_allclose(exact_value(garnet, policy), v, atol=1e-10)

    def test_optimal_q_dominates_policy_q(self, garnet):
        q_star = optimal_q_value(garnet)
        q_pi = exact_q_value(garnet, Policy.uniform(garnet.n_states, garnet.n_actions))
        assert np.all(q_star >= q_pi - 1e-10)
        np.testing.assert_allclose(q_star, garnet.reward + garnet.gamma * garnet.kernel @ q_star.max(axis=1),
                                   atol=1e-10)


def test_fixture_roundtrip(tmp_path, garnet):
    phi = np.arange(16.0).reshape(8, 2)
    save_mdp(garnet, tmp_path / "g.json", phi=phi)
    loaded, extra = load_mdp(tmp_path / "g.json")
    np.testing.assert_array_equal(loaded.kernel, garnet.kernel)
    np.testing.assert_array_equal(loaded.reward, garnet.reward)
    assert loaded.gamma == garnet.gamma
    np.testing.assert_array_equal(extra["phi"], phi)


def test_reward_scale():
    mdp = _chain_mdp([[1.0]], [3.0]).with_reward_scale(0.5)
    assert mdp.reward[0, 0] == 1.5
