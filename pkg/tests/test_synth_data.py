import numpy as np
import pytest

from latentplan.synth_data import GeneratorSpec, channel_names, generate


def silhouette_two_clusters(D, labels):
    """Mean silhouette over labeled points (labels 0/1; -1 ignored)."""
    scores = []
    for i in range(D.shape[0]):
        li = labels[i]
        if li < 0:
            continue
        same = (labels == li) & (np.arange(len(labels)) != i)
        other = labels == (1 - li)
        a = D[i, same].mean()
        b = D[i, other].mean()
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


class TestGenerate:
    def test_noise_free_circle_exactly_periodic(self):
        spec = GeneratorSpec(kind="circle", n_channels=8, noise_std=0.0, frames_per_cycle=24,
                             n_cycles=3, turn_amplitude=0.4, seed=2)
        data, _ = generate(spec)
        Y = data.observations
        np.testing.assert_array_equal(Y[:24], Y[24:48])
        np.testing.assert_array_equal(Y[:24], Y[48:])
        np.testing.assert_array_equal(data.phase[:24], data.phase[24:48])

    def test_zero_yaw_integrates_straight(self):
        spec = GeneratorSpec(kind="circle", n_channels=8, noise_std=0.0, frames_per_cycle=24,
                             n_cycles=2, turn_amplitude=0.0, seed=3)
        data, _ = generate(spec)
        h = 1.0 / data.frame_rate
        g = np.zeros(3)
        for y in data.observations:
            c, s = np.cos(g[2]), np.sin(g[2])
            g = g + h * np.array([c * y[0] - s * y[1], s * y[0] + c * y[1], y[2]])
        assert abs(g[1]) < 1e-9
        assert abs(g[2]) < 1e-9
        assert g[0] > 0

    def test_two_gait_clusters_with_bridge(self):
        spec = GeneratorSpec(kind="two-gait", n_channels=12, noise_std=0.03,
                             frames_per_cycle=72, n_cycles=2, seed=1)
        data, truth = generate(spec)
        Y = data.observations
        D = np.linalg.norm(Y[:, None, :] - Y[None, :, :], axis=-1)
        score = silhouette_two_clusters(D, truth["labels"])
        assert score >= 0.4
        assert np.any(truth["labels"] == -1)  # bridge frames exist

    def test_turning_sequences_and_levels(self):
        spec = GeneratorSpec(kind="turning", n_channels=12, noise_std=0.0, frames_per_cycle=20,
                             n_cycles=2, turn_amplitude=1.0, turn_levels=3, seed=0,
                             frame_rate=15.0)
        data, truth = generate(spec)
        # odd level count yields a mirror-complete set: two straights + a +-pair
        assert data.sequence_starts == (0, 40, 80, 120)
        yaw = data.observations[:, 2]
        np.testing.assert_allclose(yaw[:80], 0.0)
        np.testing.assert_allclose(yaw[80:120], 1.0)
        np.testing.assert_allclose(yaw[120:], -1.0)

    def test_turning_noise_is_mirror_symmetric(self):
        spec = GeneratorSpec(kind="turning", n_channels=12, noise_std=0.05, frames_per_cycle=20,
                             n_cycles=1, turn_amplitude=1.0, turn_levels=3, seed=7,
                             frame_rate=15.0)
        data, _ = generate(spec)
        Y = data.observations
        names = list(data.channel_names)
        parity = np.array([-1.0 if nm in ("v_lat", "yaw_rate") else 1.0 for nm in names])
        # each pair is an exact reflection, noise included
        np.testing.assert_allclose(Y[0:20] * parity, Y[20:40], atol=1e-12)
        np.testing.assert_allclose(Y[40:60] * parity, Y[60:80], atol=1e-12)

    def test_determinism_per_seed(self):
        spec = GeneratorSpec(kind="two-gait", seed=9)
        d1, t1 = generate(spec)
        d2, t2 = generate(spec)
        np.testing.assert_array_equal(d1.observations, d2.observations)
        np.testing.assert_array_equal(t1["latent"], t2["latent"])

    def test_channel_names_layout(self):
        assert channel_names(4) == ["v_fwd", "v_lat", "yaw_rate", "joint_0"]
        names = channel_names(12)
        assert names[:4] == ["v_fwd", "v_lat", "yaw_rate", "root_z"]
        assert sum(1 for n in names if n.startswith("joint_")) == 3
        assert len(names) == 12

    def test_rejects_small_channel_count(self):
        with pytest.raises(ValueError):
            GeneratorSpec(n_channels=3)

    def test_ground_truth_matches_observation_count(self):
        spec = GeneratorSpec(kind="lissajous", n_channels=6, frames_per_cycle=16, n_cycles=2, seed=4)
        data, truth = generate(spec)
        assert truth["latent"].shape == (data.n_frames, 2)
        assert truth["phase"].shape == (data.n_frames,)
