import math

import numpy as np
import pytest

from latentplan.dynamics import (
    AugmentedState,
    VelocityChannels,
    decode_pose,
    global_step,
    global_step_batch,
    heading_rotation,
    latent_step_distribution,
    rollout_mean,
    wrap_angle,
)


class TestWrapAngle:
    def test_half_open_interval(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
        assert wrap_angle(0.5) == pytest.approx(0.5)
        assert wrap_angle(2 * math.pi + 0.3) == pytest.approx(0.3)


class TestVelocityChannels:
    def test_from_names(self):
        ch = VelocityChannels.from_names(("v_fwd", "v_lat", "yaw_rate", "root_z"))
        assert (ch.forward, ch.lateral, ch.yaw_rate) == (0, 1, 2)

    def test_missing_names_give_none(self):
        assert VelocityChannels.from_names(("a", "b")) is None
        assert VelocityChannels.from_names(None) is None

    def test_rejects_duplicate_indices(self):
        with pytest.raises(ValueError):
            VelocityChannels(0, 0, 1)


class TestGlobalStep:
    CH = VelocityChannels(0, 1, 2)

    def test_straight_ahead(self):
        g = global_step(np.zeros(3), np.array([1.0, 0.0, 0.0]), np.zeros(3), np.zeros(3), self.CH, 1.0)
        np.testing.assert_allclose(g, [1.0, 0.0, 0.0])

    def test_rotated_heading(self):
        g0 = np.array([0.0, 0.0, math.pi / 2])
        g = global_step(g0, np.array([1.0, 0.0, 0.0]), np.zeros(3), np.zeros(3), self.CH, 1.0)
        np.testing.assert_allclose(g, [0.0, 1.0, math.pi / 2], atol=1e-12)

    def test_zero_velocity_fixed_point(self):
        g0 = np.array([2.0, -1.0, 0.7])
        g = global_step(g0, np.zeros(3), np.zeros(3), np.zeros(3), self.CH, 0.25)
        np.testing.assert_allclose(g, g0)

    def test_time_step_scales_displacement(self):
        y = np.array([2.0, 0.5, 0.1])
        g1 = global_step(np.zeros(3), y, np.zeros(3), np.zeros(3), self.CH, 0.1)
        g2 = global_step(np.zeros(3), y, np.zeros(3), np.zeros(3), self.CH, 0.2)
        np.testing.assert_allclose(2 * g1[:2], g2[:2], atol=1e-12)

    def test_heading_equivariance(self):
        # rotating the start heading rotates the displacement by the same angle
        y = np.array([1.3, -0.4, 0.2])
        phi = 0.9
        base = global_step(np.zeros(3), y, np.zeros(3), np.zeros(3), self.CH, 1.0)
        turned = global_step(np.array([0.0, 0.0, phi]), y, np.zeros(3), np.zeros(3), self.CH, 1.0)
        R = heading_rotation(phi)[:2, :2]
        np.testing.assert_allclose(turned[:2], R @ base[:2], atol=1e-12)
        assert turned[2] == pytest.approx(wrap_angle(base[2] + phi))

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(0)
        G = rng.normal(size=(7, 3))
        V = rng.normal(size=(7, 3))
        batch = global_step_batch(G, V, 0.2)
        for i in range(7):
            single = global_step(G[i], V[i], np.zeros(3), np.zeros(3), self.CH, 0.2)
            np.testing.assert_allclose(batch[i], single, atol=1e-12)


class TestLearnedDynamics:
    def test_step_mean_near_stored_successor(self, two_gait_model):
        model, _ = two_gait_model
        x = model.dyn_inputs[10]
        mean, cov = latent_step_distribution(model, x)
        noise = math.sqrt(cov.max()) if cov.max() > 0 else 1e-3
        assert np.linalg.norm(mean - model.dyn_targets[10]) < 4 * noise

    def test_prior_limit_far_from_data(self, two_gait_model):
        model, _ = two_gait_model
        far = np.full(model.latent_dim, 60.0)
        mean, cov = latent_step_distribution(model, far)
        np.testing.assert_allclose(mean, 0.0, atol=1e-8)
        prior_var = model.dyn_params.amplitude + 1.0 / model.dyn_params.noise_precision
        free = model.free_dims
        assert cov[free[0], free[0]] == pytest.approx(prior_var, rel=1e-8)

    def test_periodic_dims_noise_free(self, two_gait_model):
        model, _ = two_gait_model
        _, cov = latent_step_distribution(model, model.latent[5])
        for i, role in enumerate(model.latent_dim_roles):
            if role != "free":
                assert np.all(cov[i, :] == 0.0)
                assert np.all(cov[:, i] == 0.0)

    def test_variance_nonnegative_on_probes(self, two_gait_model):
        model, _ = two_gait_model
        rng = np.random.default_rng(2)
        probes = rng.normal(scale=2.0, size=(50, model.latent_dim))
        _, var = model.step_distribution_batch(probes)
        assert np.all(var >= 0.0)

    def test_decode_training_row(self, two_gait_model, two_gait_data):
        model, _ = two_gait_model
        data, _ = two_gait_data
        pose = decode_pose(model, model.latent[7])
        err = np.linalg.norm(pose - data.observations[7])
        assert err < 10 * np.linalg.norm(data.observations.std(axis=0)) * 0.1

    def test_decode_prior_limit_returns_offsets(self, two_gait_model):
        model, _ = two_gait_model
        far = np.full(model.latent_dim, 80.0)
        pose = decode_pose(model, far)
        np.testing.assert_allclose(pose, model.channel_offsets, atol=1e-8)

    def test_decode_with_noise_needs_rng(self, two_gait_model):
        model, _ = two_gait_model
        with pytest.raises(ValueError):
            decode_pose(model, model.latent[0], with_noise=True)
        rng = np.random.default_rng(0)
        noisy = decode_pose(model, model.latent[0], with_noise=True, rng=rng)
        clean = decode_pose(model, model.latent[0])
        assert noisy.shape == clean.shape
        assert not np.array_equal(noisy, clean)

    def test_decode_lipschitz_probe(self, two_gait_model):
        # kernel-smooth decoder: finite-difference slope bounded by a constant
        # derived from the kernel derivative bound
        model, _ = two_gait_model
        p = model.map_params
        targets_scale = np.abs(model.ky_cache.inv_times_targets).sum()
        lip_bound = p.amplitude * math.sqrt(p.inverse_lengthscale * math.e) * targets_scale
        rng = np.random.default_rng(3)
        x = model.latent[11]
        for _ in range(5):
            eps = 1e-4 * rng.normal(size=model.latent_dim)
            d = np.linalg.norm(decode_pose(model, x + eps) - decode_pose(model, x))
            assert d <= lip_bound * np.linalg.norm(eps)

    def test_mean_rollout_stays_in_tube(self, two_gait_model):
        from conftest import TWO_GAIT_SPEC

        model, _ = two_gait_model
        _, var = model.step_distribution_batch(model.dyn_inputs)
        tube = 3.0 * float(np.sqrt(var).mean())
        path = rollout_mean(model, model.latent[0], TWO_GAIT_SPEC.frames_per_cycle)
        worst = max(np.linalg.norm(model.latent - x, axis=1).min() for x in path)
        assert worst < tube


class TestAugmentedState:
    def test_wraps_heading(self):
        s = AugmentedState(np.zeros(2), np.array([0.0, 0.0, 3 * math.pi]))
        assert s.global_pose[2] == pytest.approx(math.pi)

    def test_latent_only(self):
        s = AugmentedState(np.array([1.0, 2.0]))
        assert s.global_pose is None
