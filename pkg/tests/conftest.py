import copy

import pytest

torch = pytest.importorskip("torch")

from stitch.configs import STITCH_CONFIGS
from stitch.modules import (
    LdsParams,
    MaskedTimeSeries,
    simulate,
    solve_stationary_covariance,
)
from stitch.utils import make_generator, spectral_radius


def random_params(p, n, seed=0, radius=0.8, noise=0.5):
    """Stable LDS with generic A, full-rank Q and R in [noise, 2·noise)."""
    g = make_generator(seed)
    A = torch.randn(n, n, generator=g, dtype=torch.float64)
    A = A * (radius / spectral_radius(A))
    B = torch.randn(n, n, generator=g, dtype=torch.float64)
    Q = B @ B.T / n + 0.1 * torch.eye(n, dtype=torch.float64)
    Pi0 = solve_stationary_covariance(A, Q)
    C = torch.randn(p, n, generator=g, dtype=torch.float64)
    R = noise * (1 + torch.rand(p, generator=g, dtype=torch.float64))
    return LdsParams(A=A, C=C, Q=Q, R=R, Pi0=Pi0)


@pytest.fixture
def make_params():
    return random_params


@pytest.fixture
def make_data():

    def make(params, scheme, seed=0):
        Y, _ = simulate(params, scheme.T, seed)
        return MaskedTimeSeries.from_full(Y, scheme)

    return make


@pytest.fixture
def config():
    """Fresh deep copy of the registered default configs."""

    def make(section, **overrides):
        cfg = copy.deepcopy(STITCH_CONFIGS[section])
        cfg.update(overrides)
        return cfg

    return make
