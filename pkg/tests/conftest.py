import numpy as np
import pytest

from latentplan.lvm import BackConstraintSpec, TrainConfig, train
from latentplan.synth_data import GeneratorSpec, generate

# Frozen configurations for the session-scoped trained models.  The two-gait
# model backs the training-quality checks; the turning model (three sequences:
# straight, left, right) backs the planner benchmark.
TWO_GAIT_SPEC = GeneratorSpec(
    kind="two-gait",
    n_channels=12,
    noise_std=0.03,
    frames_per_cycle=48,
    n_cycles=3,
    turn_amplitude=0.0,
    seed=1,
)
TWO_GAIT_TRAIN = TrainConfig(
    latent_dim=3,
    iterations=60,
    back_constraints=BackConstraintSpec(("rbf", "periodic-cos", "periodic-sin")),
    seed=0,
)

TURNING_SPEC = GeneratorSpec(
    kind="turning",
    n_channels=12,
    noise_std=0.03,
    frames_per_cycle=40,
    n_cycles=2,
    turn_amplitude=0.7,
    seed=5,
    slow_speed=1.0,
    fast_speed=1.0,
    frame_rate=15.0,
)
TURNING_TRAIN = TrainConfig(
    latent_dim=3,
    iterations=150,
    back_constraints=BackConstraintSpec(("rbf", "periodic-cos", "periodic-sin")),
    seed=0,
)


@pytest.fixture(scope="session")
def two_gait_data():
    return generate(TWO_GAIT_SPEC)


_train_times = {}


@pytest.fixture(scope="session")
def two_gait_model(two_gait_data):
    import time

    data, _ = two_gait_data
    t0 = time.perf_counter()
    model, history = train(data, TWO_GAIT_TRAIN)
    _train_times["two_gait"] = time.perf_counter() - t0
    return model, history


@pytest.fixture(scope="session")
def two_gait_train_time(two_gait_model):
    return _train_times["two_gait"]


@pytest.fixture(scope="session")
def turning_data():
    return generate(TURNING_SPEC)


@pytest.fixture(scope="session")
def turning_model(turning_data):
    data, _ = turning_data
    model, history = train(data, TURNING_TRAIN)
    return model, history


class ToyLinearSystem:
    """Minimal generative-system stand-in: linear latent mean, constant noise,
    identity-ish decode.  Satisfies the planner/multiscale model surface."""

    def __init__(self, a=0.9, sigma=0.2, d=1, frame_rate=1.0, decode_scale=1.0):
        self.a = a
        self.sigma = sigma
        self.latent_dim = d
        self.frame_rate = frame_rate
        self.decode_scale = decode_scale
        self.free_dims = np.arange(d)
        self.latent_dim_roles = ("free",) * d
        self.channel_names = None

    def step_distribution_batch(self, X):
        X = np.atleast_2d(X)
        return self.a * X, np.full(X.shape[0], self.sigma**2)

    def decode_batch(self, X):
        X = np.atleast_2d(X)
        return self.decode_scale * X, np.zeros(X.shape[0])


@pytest.fixture
def toy_linear():
    return ToyLinearSystem()
