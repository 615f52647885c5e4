import numpy as np
import pytest

from smcd.arm import forward_kinematics, make_eval_episode
from smcd.baselines import (GradientAdaptation, NoAdaptation, OraclePfAdaptation,
                            OraclePfConfig, SmcdAdaptation, make_strategy)
from smcd.filter import FilterConfig, Observation, mmse_mask
from smcd.net import forward_masked, forward_mean, init_net

from helpers import net_bytes


@pytest.fixture(scope="module")
def small_net():
    return init_net((2, 16, 16, 2), dropout_p=0.5, seed=0)


def feed(strategy, episode, n):
    for t in range(n):
        strategy.observe(Observation(episode.q[t], episode.xy[t]))


class TestNoAdaptation:
    def test_observe_is_noop_and_predicts_mean(self, small_net):
        strat = NoAdaptation(small_net)
        q = np.array([0.3, -0.7])
        before = strat.predict(q)
        strat.observe(Observation(q, np.array([9.0, 9.0])))
        np.testing.assert_array_equal(strat.predict(q), before)
        np.testing.assert_array_equal(before, forward_mean(small_net, q))


class TestSmcd:
    def test_zero_observations_predicts_mean(self, small_net):
        strat = SmcdAdaptation(small_net, FilterConfig(n_particles=16, seed=1))
        q = np.array([0.5, 0.5])
        np.testing.assert_array_equal(strat.predict(q), forward_mean(small_net, q))

    def test_single_particle_prediction_is_masked_forward(self, small_net):
        strat = SmcdAdaptation(small_net, FilterConfig(n_particles=1, seed=2))
        ep = make_eval_episode(3, burn_in=1, horizon=1)
        feed(strat, ep, 1)
        mask = strat.state.particles[0]
        q = np.array([0.2, 0.2])
        np.testing.assert_array_equal(strat.predict(q),
                                      forward_masked(small_net, q, mask))

    def test_prediction_matches_mmse_recompute(self, small_net):
        cfg = FilterConfig(n_particles=64, seed=3)
        strat = SmcdAdaptation(small_net, cfg)
        ep = make_eval_episode(4, burn_in=5, horizon=1)
        feed(strat, ep, 5)
        q = np.array([-0.4, 0.9])
        manual = forward_masked(small_net, q, mmse_mask(strat.state))
        np.testing.assert_allclose(strat.predict(q), manual, atol=1e-12)

    def test_never_mutates_network(self, small_net):
        before = net_bytes(small_net)
        strat = SmcdAdaptation(small_net, FilterConfig(n_particles=32, seed=4))
        ep = make_eval_episode(5, burn_in=10, horizon=1)
        feed(strat, ep, 10)
        strat.predict(np.zeros(2))
        strat.jacobian(np.zeros(2))
        assert net_bytes(small_net) == before
        np.testing.assert_array_equal(forward_mean(small_net, np.ones(2)),
                                      forward_mean(small_net, np.ones(2)))

    def test_trace_recording(self, small_net):
        strat = SmcdAdaptation(small_net, FilterConfig(n_particles=8, seed=5),
                               record_trace=True)
        ep = make_eval_episode(6, burn_in=3, horizon=1)
        feed(strat, ep, 3)
        assert [t[0] for t in strat.trace] == [1, 2, 3]
        assert all(len(t[2]) == small_net.mask_dim for t in strat.trace)


class TestGradient:
    def test_zero_lr_leaves_network(self, small_net):
        strat = GradientAdaptation(small_net, lr=0.0)
        q = np.array([0.1, 0.1])
        before = strat.predict(q)
        strat.observe(Observation(q, np.array([5.0, -5.0])))
        np.testing.assert_array_equal(strat.predict(q), before)

    def test_adapts_toward_observation(self, small_net):
        strat = GradientAdaptation(small_net, lr=1e-2)
        q = np.array([0.4, -0.2])
        target = forward_mean(small_net, q) + np.array([0.5, -0.5])
        before = np.linalg.norm(strat.predict(q) - target)
        for _ in range(20):
            strat.observe(Observation(q, target))
        assert np.linalg.norm(strat.predict(q) - target) < before

    def test_source_network_untouched(self, small_net):
        before = net_bytes(small_net)
        strat = GradientAdaptation(small_net, lr=1e-2)
        strat.observe(Observation(np.zeros(2), np.ones(2)))
        assert net_bytes(small_net) == before


class TestOraclePf:
    def test_zero_observations_uses_prior_mean_lengths(self):
        strat = OraclePfAdaptation(OraclePfConfig(n_particles=50, seed=0))
        q = np.array([0.3, 0.3])
        np.testing.assert_array_equal(strat.predict(q),
                                      forward_kinematics(q, [1.0, 1.0]))

    def test_converges_to_true_lengths(self):
        true = np.array([1.2, 0.8])
        cfg = OraclePfConfig(n_particles=500, jitter=0.005, sigma=0.01, seed=1)
        strat = OraclePfAdaptation(cfg)
        ep = make_eval_episode(7, burn_in=50, horizon=1, lengths=true)
        feed(strat, ep, 50)
        est = strat.mean_lengths()
        assert np.all(np.abs(est - true) < 0.05)

    def test_matches_grid_search_mle(self):
        true = np.array([1.15, 0.85])
        ep = make_eval_episode(8, burn_in=50, horizon=1, lengths=true)
        strat = OraclePfAdaptation(OraclePfConfig(n_particles=500, seed=2))
        feed(strat, ep, 50)
        grid = np.arange(0.5, 1.51, 0.005)
        l1g, l2g = np.meshgrid(grid, grid, indexing="ij")
        sse = np.zeros_like(l1g)
        for t in range(50):
            pred = forward_kinematics(
                ep.q[t], np.stack([l1g, l2g], axis=-1))
            sse += np.sum((pred - ep.xy[t]) ** 2, axis=-1)
        best = np.unravel_index(np.argmin(sse), sse.shape)
        mle = np.array([grid[best[0]], grid[best[1]]])
        assert np.all(np.abs(strat.mean_lengths() - mle) < 0.03)

    def test_lengths_stay_positive(self):
        cfg = OraclePfConfig(n_particles=200, jitter=0.3, sigma=0.5, seed=3)
        strat = OraclePfAdaptation(cfg)
        ep = make_eval_episode(9, burn_in=30, horizon=1)
        feed(strat, ep, 30)
        assert np.all(strat.lengths > 0)

    def test_collapsed_posterior_predicts_exact_kinematics(self):
        true = np.array([1.05, 0.95])
        strat = OraclePfAdaptation(OraclePfConfig(n_particles=500, seed=4))
        ep = make_eval_episode(10, burn_in=60, horizon=1, lengths=true)
        feed(strat, ep, 60)
        q = np.array([0.25, -0.5])
        err = np.linalg.norm(strat.predict(q) - forward_kinematics(q, true))
        assert err < 0.02


class TestFactory:
    @pytest.mark.parametrize("name,cls", [
        ("none", NoAdaptation), ("smcd", SmcdAdaptation),
        ("gradient", GradientAdaptation), ("oracle_pf", OraclePfAdaptation)])
    def test_builds_each_variant(self, small_net, name, cls):
        strat = make_strategy(name, small_net,
                              filter_cfg=FilterConfig(n_particles=4), seed=7)
        assert isinstance(strat, cls)

    def test_unknown_name_rejected(self, small_net):
        with pytest.raises(ValueError, match="unknown strategy"):
            make_strategy("reptile", small_net)

    def test_all_strategies_predict_mean_before_observations(self, small_net):
        q = np.array([0.6, -0.6])
        mean = forward_mean(small_net, q)
        for name in ("none", "smcd", "gradient"):
            strat = make_strategy(name, small_net,
                                  filter_cfg=FilterConfig(n_particles=8), seed=8)
            np.testing.assert_array_equal(strat.predict(q), mean)
