import numpy as np
import pytest

from smcd.filter import (FilterConfig, FilterState, Observation, effective_sample_size,
                         init_filter, log_likelihood, mmse_mask, posterior_predict,
                         resample, step, transition, write_mask_trace, _flip_batch)
from smcd.net import MaskParticle, forward_masked, init_net

from helpers import all_masks, exact_bayes_marginals, net_bytes, toy_offset_net


def make_state(particles, weights=None, seed=0):
    n = len(particles)
    if weights is None:
        weights = np.full(n, 1.0 / n)
    return FilterState(np.asarray(particles, dtype=float),
                       np.asarray(weights, dtype=float), 1,
                       effective_sample_size(weights), np.random.default_rng(seed))


class TestInit:
    def test_single_particle(self):
        net = init_net((2, 8, 2), dropout_p=0.5, seed=0)
        state = init_filter(FilterConfig(n_particles=1, seed=0), net)
        assert state.particles.shape == (1, net.mask_dim)
        np.testing.assert_array_equal(state.weights, [1.0])

    def test_p_zero_warns_and_gives_all_ones(self):
        net = init_net((2, 8, 2), dropout_p=0.0, seed=1)
        with pytest.warns(RuntimeWarning, match="dropout_p = 0"):
            state = init_filter(FilterConfig(n_particles=16, seed=0), net)
        assert np.all(state.particles == 1.0)

    def test_initial_bit_density(self):
        net = init_net((2, 256, 256, 256, 2), dropout_p=0.5, seed=2)
        state = init_filter(FilterConfig(n_particles=1000, seed=3), net)
        assert state.particles.shape == (1000, 768)
        assert 0.49 <= state.particles.mean() <= 0.51

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FilterConfig(n_particles=0)
        with pytest.raises(ValueError):
            FilterConfig(meas_noise_sigma=0.0)
        with pytest.raises(ValueError):
            FilterConfig(flip_rate=1.5)
        with pytest.raises(ValueError):
            FilterConfig(resample_threshold=0.0)
        with pytest.raises(ValueError):
            FilterConfig(resample_scheme="residual")


class TestTransition:
    def test_zero_rate_identity(self):
        mask = MaskParticle(np.array([1.0, 0.0, 1.0, 1.0]))
        out = transition(mask, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out.bits, mask.bits)

    def test_rate_one_complements(self):
        mask = MaskParticle(np.array([1.0, 0.0, 1.0, 1.0]))
        out = transition(mask, 1.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out.bits, 1.0 - mask.bits)

    def test_mean_hamming_distance(self):
        rng = np.random.default_rng(1)
        parents = (rng.random((10_000, 1000)) < 0.5).astype(float)
        children = _flip_batch(parents, 0.02, rng)
        hamming = np.abs(children - parents).sum(axis=1)
        assert 18.0 <= hamming.mean() <= 22.0

    def test_exact_count_mode_flips_floor(self):
        rng = np.random.default_rng(2)
        parents = (rng.random((50, 100)) < 0.5).astype(float)
        children = _flip_batch(parents, 0.027, rng, exact_count=True)
        hamming = np.abs(children - parents).sum(axis=1)
        assert np.all(hamming == 2)  # floor(0.027 * 100)

    def test_invalid_rate_rejected(self):
        with pytest.raises(ValueError):
            transition(MaskParticle(np.ones(4)), 1.2, np.random.default_rng(0))


class TestLogLikelihood:
    def test_gaussian_constants(self):
        # dim 2, sigma 1, zero residual -> -log(2*pi)
        net = init_net((2, 4, 2), dropout_p=0.5, seed=3)
        x = np.array([0.1, 0.2])
        mask = np.ones(net.mask_dim)
        z = forward_masked(net, x, mask)
        val = log_likelihood(net, mask, Observation(x, z), sigma=1.0)
        assert val == pytest.approx(-np.log(2 * np.pi), abs=1e-12)
        # residual norm^2 = 2 lowers the value by exactly 1
        z2 = z + np.array([1.0, 1.0])
        val2 = log_likelihood(net, mask, Observation(x, z2), sigma=1.0)
        assert val2 == pytest.approx(val - 1.0, abs=1e-12)

    def test_smallest_residual_wins(self):
        net = toy_offset_net([1.0, 0.5, 0.25], p=0.5)
        x = np.zeros(1)
        masks = all_masks(3)
        z = np.array([1.1])
        scores = [log_likelihood(net, m, Observation(x, z), 0.3) for m in masks]
        preds = np.array([forward_masked(net, x, m)[0] for m in masks])
        assert np.argmax(scores) == np.argmin(np.abs(preds - z[0]))

    def test_non_finite_prediction_killed(self):
        net = init_net((1, 4, 1), dropout_p=0.5, seed=4)
        net.weights[0][0, 0] = np.inf
        with pytest.warns(RuntimeWarning, match="non-finite"):
            val = log_likelihood(net, np.ones(net.mask_dim),
                                 Observation(np.array([1.0]), np.array([0.0])), 1.0)
        assert val == -np.inf

    def test_sigma_validation(self):
        net = init_net((1, 4, 1), dropout_p=0.5, seed=5)
        with pytest.raises(ValueError):
            log_likelihood(net, np.ones(net.mask_dim),
                           Observation(np.array([1.0]), np.array([0.0])), 0.0)


class TestEffectiveSampleSize:
    def test_uniform_gives_n(self):
        assert effective_sample_size(np.full(10, 0.1)) == pytest.approx(10.0)

    def test_degenerate_gives_one(self):
        assert effective_sample_size(np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0)

    def test_hand_value(self):
        assert effective_sample_size(np.array([0.5, 0.25, 0.25])) == pytest.approx(8 / 3)


class TestResample:
    def test_degenerate_weight_copies_winner(self):
        particles = np.arange(5, dtype=float)[:, None]
        weights = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
        out = resample(particles, weights, np.random.default_rng(0))
        assert np.all(out == 2.0)

    def test_uniform_weights_systematic_is_identity(self):
        particles = np.arange(8, dtype=float)[:, None]
        weights = np.full(8, 1 / 8)
        out = resample(particles, weights, np.random.default_rng(1))
        np.testing.assert_array_equal(out, particles)

    @pytest.mark.parametrize("scheme", ["systematic", "multinomial"])
    def test_copy_counts_unbiased(self, scheme):
        particles = np.arange(3, dtype=float)[:, None]
        weights = np.array([0.5, 0.3, 0.2])
        rng = np.random.default_rng(2)
        n_draws, n_runs = 10, 1000
        counts = np.zeros((n_runs, 3))
        big = np.repeat(particles, [5, 3, 2], axis=0)  # particle set of 10 with those weights
        w10 = np.repeat(weights / np.array([5, 3, 2]), [5, 3, 2])
        for r in range(n_runs):
            out = resample(big, w10, rng, scheme)
            for i in range(3):
                counts[r, i] = np.sum(out == i)
        means = counts.mean(axis=0)
        ses = counts.std(axis=0, ddof=1) / np.sqrt(n_runs) + 1e-12
        assert np.all(np.abs(means - np.array([5.0, 3.0, 2.0])) <= 3 * ses + 1e-9)

    def test_systematic_noninteger_expected_counts(self):
        particles = np.arange(3, dtype=float)[:, None]
        weights = np.array([0.55, 0.25, 0.2])
        rng = np.random.default_rng(3)
        counts = np.zeros(3)
        n_runs = 2000
        for _ in range(n_runs):
            out = resample(particles, weights, rng)
            for i in range(3):
                counts[i] += np.sum(out == i)
        np.testing.assert_allclose(counts / n_runs, 3 * weights, atol=0.1)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            resample(np.zeros((2, 1)), np.array([0.5, 0.5]),
                     np.random.default_rng(0), "bogus")


class TestStep:
    def test_single_particle_survives_any_observation(self):
        net = toy_offset_net([1.0, 0.5], p=0.5)
        cfg = FilterConfig(n_particles=1, flip_rate=0.0, meas_noise_sigma=0.5, seed=0)
        state = init_filter(cfg, net)
        before = state.particles.copy()
        out = step(state, net, Observation(np.zeros(1), np.array([123.0])), cfg)
        np.testing.assert_array_equal(out.particles, before)  # flip_rate 0
        assert out.step_count == 1

    def test_flat_likelihood_reduces_to_pure_transition(self):
        net = toy_offset_net([1.0, 0.5, 0.25, 0.1], p=0.5)
        cfg = FilterConfig(n_particles=64, flip_rate=0.05, meas_noise_sigma=1e6, seed=5)
        state = init_filter(cfg, net)
        start = state.particles.copy()
        twin_rng = np.random.default_rng(5)
        _ = (twin_rng.random((64, net.mask_dim)) < 0.5)  # consume the init draw
        expected = _flip_batch(start, 0.05, twin_rng)
        out = step(state, net, Observation(np.zeros(1), np.array([0.7])), cfg)
        np.testing.assert_array_equal(out.particles, expected)
        np.testing.assert_allclose(out.weights, np.full(64, 1 / 64))

    def test_flat_likelihood_marginals_follow_flip_chain(self):
        net = toy_offset_net([1.0] * 8, p=0.5)
        cfg = FilterConfig(n_particles=500, flip_rate=0.3, meas_noise_sigma=1e6, seed=6)
        state = init_filter(cfg, net)
        for _ in range(10):
            state = step(state, net, Observation(np.zeros(1), np.array([0.0])), cfg)
        # flip chain keeps the 0.5 marginal stationary
        assert abs(state.particles.mean() - 0.5) < 0.05

    def test_weights_stay_normalized_without_resampling(self):
        net = toy_offset_net([1.0, 0.5, 0.25], p=0.5)
        cfg = FilterConfig(n_particles=32, flip_rate=0.02, meas_noise_sigma=0.5,
                           resample_threshold=0.01, seed=7)
        state = init_filter(cfg, net)
        for t in range(5):
            state = step(state, net, Observation(np.zeros(1), np.array([1.0])), cfg)
            assert abs(state.weights.sum() - 1.0) < 1e-12
            assert 1.0 <= state.n_eff <= 32.0 + 1e-9

    def test_total_collapse_falls_back_to_uniform(self):
        net = toy_offset_net([1.0, 0.5], p=0.5)
        cfg = FilterConfig(n_particles=8, flip_rate=0.0, meas_noise_sigma=1e-3, seed=8)
        state = init_filter(cfg, net)
        # z so far away that every exp underflows through the log-space path
        # only a non-finite prediction can produce -inf for all; force it
        bad = toy_offset_net([np.inf, np.inf], p=0.5)
        with pytest.warns(RuntimeWarning):
            out = step(state, bad, Observation(np.zeros(1), np.array([0.0])), cfg)
        np.testing.assert_allclose(out.weights, np.full(8, 1 / 8))

    def test_network_never_mutated(self):
        net = init_net((2, 16, 2), dropout_p=0.5, seed=9)
        before = net_bytes(net)
        cfg = FilterConfig(n_particles=32, seed=10)
        state = init_filter(cfg, net)
        for t in range(5):
            state = step(state, net,
                         Observation(np.array([0.1, 0.2]), np.array([0.5, -0.5])), cfg)
        assert net_bytes(net) == before

    def test_posterior_concentrates_on_consistent_bit(self):
        # output offset controlled by bit 0; observations say bit 0 is on
        coeffs = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        net = toy_offset_net(coeffs, p=0.5)
        true_mask = np.array([1.0, 1.0, 0.0, 1.0, 0.0, 1.0])
        z = forward_masked(net, np.zeros(1), true_mask)
        cfg = FilterConfig(n_particles=128, flip_rate=0.02, meas_noise_sigma=0.1,
                           seed=11)
        state = init_filter(cfg, net)
        for _ in range(20):
            state = step(state, net, Observation(np.zeros(1), z), cfg)
        assert mmse_mask(state)[0] >= 0.95

    def test_tracks_exact_bayes_marginals(self):
        coeffs = np.array([0.8, 0.4, 0.2, 0.1, 0.05, 0.025])
        net = toy_offset_net(coeffs, p=0.5)
        rng = np.random.default_rng(12)
        true_mask = (rng.random(6) < 0.5).astype(float)
        sigma, d = 0.1, 0.02
        obs = [forward_masked(net, np.zeros(1), true_mask)
               + rng.normal(0, sigma, 1) for _ in range(20)]
        exact = exact_bayes_marginals(net, np.zeros(1), obs, d, sigma)[-1]

        tvs = []
        for seed in range(5):
            cfg = FilterConfig(n_particles=512, flip_rate=d, meas_noise_sigma=sigma,
                               seed=seed)
            state = init_filter(cfg, net)
            for z in obs:
                state = step(state, net, Observation(np.zeros(1), z), cfg)
            tvs.append(np.mean(np.abs(mmse_mask(state) - exact)))
        assert np.mean(tvs) < 0.1

    def test_accuracy_improves_with_more_particles(self):
        coeffs = np.array([0.8, 0.4, 0.2, 0.1, 0.05])
        net = toy_offset_net(coeffs, p=0.5)
        rng = np.random.default_rng(13)
        true_mask = (rng.random(5) < 0.5).astype(float)
        sigma, d = 0.1, 0.02
        obs = [forward_masked(net, np.zeros(1), true_mask)
               + rng.normal(0, sigma, 1) for _ in range(15)]
        exact = exact_bayes_marginals(net, np.zeros(1), obs, d, sigma)[-1]

        def mean_tv(n):
            tvs = []
            for seed in range(6):
                cfg = FilterConfig(n_particles=n, flip_rate=d,
                                   meas_noise_sigma=sigma, seed=100 + seed)
                state = init_filter(cfg, net)
                for z in obs:
                    state = step(state, net, Observation(np.zeros(1), z), cfg)
                tvs.append(np.mean(np.abs(mmse_mask(state) - exact)))
            return np.mean(tvs)

        assert mean_tv(512) < mean_tv(32)


class TestEstimators:
    def test_mmse_of_identical_particles(self):
        particles = np.tile(np.array([1.0, 0.0, 1.0]), (5, 1))
        state = make_state(particles)
        np.testing.assert_array_equal(mmse_mask(state), [1.0, 0.0, 1.0])

    def test_mmse_two_particle_average(self):
        state = make_state(np.array([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(mmse_mask(state), [0.5, 0.5])

    def test_mmse_matches_bruteforce_weighted_mean(self):
        rng = np.random.default_rng(14)
        particles = (rng.random((100, 12)) < 0.5).astype(float)
        w = rng.random(100)
        w /= w.sum()
        state = make_state(particles, w)
        brute = sum(wi * pi for wi, pi in zip(w, particles))
        np.testing.assert_allclose(mmse_mask(state), brute, atol=1e-12)

    def test_posterior_predict_singleton(self):
        net = toy_offset_net([1.0, 0.5], p=0.5)
        state = make_state(np.array([[1.0, 0.0]]))
        post = posterior_predict(state, net, np.zeros(1))
        assert post.outputs.shape == (1, 1)
        np.testing.assert_array_equal(post.variance, [0.0])

    def test_posterior_predict_identical_particles_zero_variance(self):
        net = toy_offset_net([1.0, 0.5], p=0.5)
        state = make_state(np.tile(np.array([1.0, 1.0]), (6, 1)))
        post = posterior_predict(state, net, np.zeros(1))
        np.testing.assert_allclose(post.variance, 0.0, atol=1e-20)

    def test_posterior_predict_mean_recomputed(self):
        net = toy_offset_net([1.0, 0.5, 0.25], p=0.5)
        rng = np.random.default_rng(15)
        particles = (rng.random((40, 3)) < 0.5).astype(float)
        state = make_state(particles)
        post = posterior_predict(state, net, np.zeros(1))
        manual = np.mean([forward_masked(net, np.zeros(1), m) for m in particles], axis=0)
        np.testing.assert_allclose(post.mean, manual, atol=1e-12)


class TestMaskTrace:
    def test_trace_file_layout(self, tmp_path):
        path = tmp_path / "trace.csv"
        records = [(1, 32.0, np.array([0.5, 0.25])), (2, 30.5, np.array([0.75, 0.5]))]
        write_mask_trace(path, records)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,n_eff,m_0,m_1"
        assert lines[1].startswith("1,32,0.5")
        assert "\r" not in path.read_text()

    def test_empty_trace_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_mask_trace(tmp_path / "t.csv", [])
