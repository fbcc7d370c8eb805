import pytest

torch = pytest.importorskip("torch")

from stitch.evaluation import largest_principal_angle, subspace_projection_error
from stitch.modules import (
    LdsParams,
    block_hankel,
    empirical_lagged_cov,
    full_scheme,
    hankel_ssid,
    predicted_lagged_cov,
    solve_stationary_covariance,
)
from stitch.s3id import StitchS3ID
from stitch.utils import make_generator


def _exact_covariances(params, S):
    return [predicted_lagged_cov(params, s) for s in range(S + 1)]


def test_block_hankel_layout(make_params):
    params = make_params(4, 2, seed=1)
    lagged = _exact_covariances(params, 5)
    H = block_hankel(lagged, 3, 2)
    assert H.shape == (12, 8)
    assert torch.equal(H[:4, :4], lagged[1])
    assert torch.equal(H[4:8, 4:], lagged[3])
    assert torch.equal(H[8:, :4], lagged[3])


def test_hankel_rank_matches_latent_dimension(make_params):
    params = make_params(10, 3, seed=2)
    sv = torch.linalg.svdvals(block_hankel(_exact_covariances(params, 7), 4,
                                           4))
    assert sv[2] / sv[3] > 1e6


@pytest.mark.parametrize("seed", range(5))
def test_hankel_ssid_reproduces_covariances(make_params, seed):
    params = make_params(10, 3, seed=seed)
    lagged = _exact_covariances(params, 7)
    fitted = hankel_ssid(lagged, 3, 4, 4)
    for s in range(8):
        err = torch.linalg.norm(predicted_lagged_cov(fitted, s) - lagged[s])
        assert err <= 1e-8 * torch.linalg.norm(lagged[s])
    assert subspace_projection_error(params.C, fitted.C) < 1e-6
    assert torch.allclose(
        torch.sort(torch.linalg.eigvals(fitted.A).abs()).values,
        torch.sort(torch.linalg.eigvals(params.A).abs()).values,
        atol=1e-8)


def test_hankel_ssid_needs_enough_lags(make_params):
    params = make_params(5, 2)
    with pytest.raises(AssertionError):
        hankel_ssid(_exact_covariances(params, 3), 2, 3, 3)


@pytest.mark.slow
def test_moment_fit_agrees_with_hankel_on_exact_covariances(make_params,
                                                             config):
    params = make_params(10, 3, seed=11, noise=0.2)
    lagged = _exact_covariances(params, 7)
    oracle = hankel_ssid(lagged, 3, 4, 4)
    assert subspace_projection_error(params.C, oracle.C) < 1e-6

    cfg = config('s3id', n=3, S=7, seed=2)
    cfg.adam.step_size = 1e-2
    fitted, _ = StitchS3ID(cfg).fit_moments(lagged, steps=20000)
    assert subspace_projection_error(params.C, fitted.C) < 1e-2


def test_hankel_ssid_on_sample_covariances(make_params, make_data):
    params = make_params(10, 3, seed=12, radius=0.9)
    data = make_data(params, full_scheme(10, 50000), seed=13)
    lagged = [empirical_lagged_cov(data, s) for s in range(8)]
    fitted = hankel_ssid(lagged, 3, 4, 4)
    assert largest_principal_angle(params.C, fitted.C) < 5.0


def test_hankel_ssid_handles_a_nearly_singular_transition():
    g = make_generator(14)
    V = torch.randn(3, 3, generator=g, dtype=torch.float64) + \
        2 * torch.eye(3, dtype=torch.float64)
    eigs = torch.tensor([0.9, 0.5, 1e-4], dtype=torch.float64)
    A = V @ torch.diag(eigs) @ torch.linalg.inv(V)
    Q = torch.eye(3, dtype=torch.float64)
    params = LdsParams(A=A,
                       C=torch.randn(10, 3, generator=g, dtype=torch.float64),
                       Q=Q, R=torch.ones(10, dtype=torch.float64),
                       Pi0=solve_stationary_covariance(A, Q))
    lagged = _exact_covariances(params, 7)
    fitted = hankel_ssid(lagged, 3, 4, 4)
    for s in (0, 1):
        err = torch.linalg.norm(predicted_lagged_cov(fitted, s) - lagged[s])
        assert err <= 1e-8 * torch.linalg.norm(lagged[s])
    assert subspace_projection_error(params.C, fitted.C) < 1e-6
