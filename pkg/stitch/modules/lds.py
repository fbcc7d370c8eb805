# Copyright 2026 The Stitch Authors. All rights reserved.
import logging
import math
from dataclasses import dataclass, field

import torch
from torch.distributions import VonMises

from ..utils.errors import LagOutOfRangeError, UnstableDynamicsError
from ..utils.utils import make_generator, psd_sqrt, spectral_radius, symmetrize

__all__ = [
    'LdsParams', 'LatentMoments', 'generate_random_lds',
    'solve_stationary_covariance', 'latent_lagged_cov', 'predicted_lagged_cov',
    'simulate'
]


@dataclass
class LdsParams:
    r"""
    Parameters of the latent model x_{t+1} = A x_t + η_t, y_t = C x_t + ε_t.

    Attributes:
        A (`torch.Tensor`): Latent dynamics, shape [n, n].
        C (`torch.Tensor`): Loading matrix, shape [p, n].
        Q (`torch.Tensor`): Innovation covariance, shape [n, n].
        R (`torch.Tensor`): Diagonal observation noise variances, shape [p].
        Pi0 (`torch.Tensor`): Stationary latent covariance, shape [n, n].
    """
    A: torch.Tensor
    C: torch.Tensor
    Q: torch.Tensor
    R: torch.Tensor
    Pi0: torch.Tensor

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def n(self):
        return self.C.shape[1]

    def moments(self, S):
        """Latent lagged covariances A^s Π₀ for s = 0..S."""
        lags = [self.Pi0]
        for _ in range(S):
            lags.append(self.A @ lags[-1])
        return LatentMoments(lags=lags)

    def clone(self):
        return LdsParams(*(t.clone() for t in (self.A, self.C, self.Q,
                                                self.R, self.Pi0)))


@dataclass
class LatentMoments:
    """Free latent lagged covariances Π_s, s = 0..S."""
    lags: list = field(default_factory=list)

    @property
    def S(self):
        return len(self.lags) - 1

    @property
    def n(self):
        return self.lags[0].shape[0]


def solve_stationary_covariance(A, Q, max_iter=200, tol=1e-10):
    r"""
    Solves Π = A Π Aᵀ + Q by the doubling iteration.

    Each step adds A_k Π A_kᵀ and squares A_k, so after k steps Π holds the
    first 2^k terms of the series Σ_j A^j Q (A^j)ᵀ.

    Args:
        A (`torch.Tensor`): Dynamics matrix with spectral radius < 1.
        Q (`torch.Tensor`): Symmetric PSD innovation covariance.
        max_iter (`int`, *optional*, defaults to 200):
            Iteration cap.
        tol (`float`, *optional*, defaults to 1e-10):
            Residual tolerance relative to max(1, ‖Q‖_F).

    Returns:
        torch.Tensor: Symmetric Π₀.
    """
    rho = spectral_radius(A)
    if not math.isfinite(rho) or rho >= 1.0:
        raise UnstableDynamicsError(
            f'spectral radius of A is {rho:.6g}, the stationary covariance '
            'does not exist')

    scale = max(1.0, torch.linalg.norm(Q).item())
    Pi = symmetrize(Q.clone())
    Ak = A.clone()
    for _ in range(max_iter):
        resid = torch.linalg.norm(Pi - A @ Pi @ A.T - Q).item()
        if not math.isfinite(resid):
            break
        if resid <= tol * scale:
            return Pi
        Pi = symmetrize(Pi + Ak @ Pi @ Ak.T)
        Ak = Ak @ Ak
    raise UnstableDynamicsError(
        f'doubling iteration did not converge in {max_iter} iterations')


def _rotation_scaling_block(r_a, r_b, theta):
    c, s = math.cos(theta), math.sin(theta)
    return torch.tensor([[r_a * c, -r_a * s], [r_b * s, r_b * c]],
                        dtype=torch.float64)


def _random_orthogonal(n, seed_g, dtype):
    q, r = torch.linalg.qr(torch.randn(n, n, generator=seed_g, dtype=dtype))
    return q * torch.sign(torch.diagonal(r))


def _sample_angles(num, kappa, seed_g, dtype):
    if num == 0 or math.isinf(kappa):
        return torch.zeros(num, dtype=dtype)
    if kappa == 0:
        return (torch.rand(num, generator=seed_g, dtype=dtype) * 2 - 1) * math.pi
    # VonMises draws from the global RNG, so run it on a forked, seeded stream
    sub_seed = int(torch.randint(2**62, (1,), generator=seed_g).item())
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(sub_seed)
        dist = VonMises(
            torch.zeros(num, dtype=dtype), torch.full((num,), kappa,
                                                      dtype=dtype))
        return dist.sample()


def generate_random_lds(cfg):
    r"""
    Draws a random stable LDS.

    Eigenvalue moduli span `cfg.eig_modulus_range` linearly. Consecutive
    moduli are paired into 2×2 rotation-scaling blocks whose angles follow a
    von Mises law with concentration `cfg.vonmises_kappa`; for odd n the
    middle modulus stays a real 1×1 block. The block-diagonal matrix is
    conjugated by a random similarity with condition number at most 10.
    With Q = I, the rows of C are scaled so that a fraction
    `cfg.private_noise_fraction` of every observed variance is private noise.

    Args:
        cfg (`EasyDict`):
            Needs p, n, eig_modulus_range, vonmises_kappa,
            private_noise_fraction and seed (see `stitch.configs.sim_cfg`).

    Returns:
        LdsParams
    """
    p, n = int(cfg.p), int(cfg.n)
    lo, hi = (float(v) for v in cfg.eig_modulus_range)
    f = float(cfg.private_noise_fraction)
    if not 0 < n <= p:
        raise ValueError(f'need 0 < n <= p, got n={n}, p={p}')
    if not 0 < lo <= hi < 1:
        raise ValueError(
            f'eigenvalue modulus range ({lo}, {hi}) must lie within (0, 1)')
    if not 0 < f < 1:
        raise ValueError(f'private_noise_fraction must lie in (0, 1), got {f}')

    dtype = torch.float64
    seed_g = make_generator(cfg.seed)
    moduli = torch.linspace(lo, hi, n, dtype=dtype).tolist()

    order = list(range(n))
    real_idx = None
    if n % 2 == 1:
        real_idx = order.pop(n // 2)
    angles = _sample_angles(len(order) // 2, float(cfg.vonmises_kappa), seed_g,
                            dtype).tolist()

    B = torch.zeros(n, n, dtype=dtype)
    pos = 0
    for k, theta in enumerate(angles):
        a, b = order[2 * k], order[2 * k + 1]
        B[pos:pos + 2, pos:pos + 2] = _rotation_scaling_block(
            moduli[a], moduli[b], theta)
        pos += 2
    if real_idx is not None:
        B[pos, pos] = moduli[real_idx]

    U = _random_orthogonal(n, seed_g, dtype)
    V = _random_orthogonal(n, seed_g, dtype)
    sigma = torch.exp(
        torch.rand(n, generator=seed_g, dtype=dtype) * math.log(10.0))
    W = (U * sigma) @ V.T
    W_inv = (V / sigma) @ U.T
    A = W @ B @ W_inv

    Q = torch.eye(n, dtype=dtype)
    Pi0 = solve_stationary_covariance(A, Q)

    C = torch.randn(p, n, generator=seed_g, dtype=dtype)
    shared_var = ((C @ Pi0) * C).sum(dim=1)
    C = C * torch.sqrt((1.0 - f) / shared_var)[:, None]
    R = torch.full((p,), f, dtype=dtype)

    logging.info(f"Generated random LDS with p={p}, n={n}, "
                 f"spectral radius {spectral_radius(A):.4f}.")
    return LdsParams(A=A, C=C, Q=Q, R=R, Pi0=Pi0)


def latent_lagged_cov(model, s):
    """
    Returns Π_s for an `LdsParams` (as A^s Π₀) or for a `(C, LatentMoments, R)`
    triple.
    """
    if s < 0:
        raise LagOutOfRangeError(f'lag must be non-negative, got {s}')
    if isinstance(model, LdsParams):
        return torch.linalg.matrix_power(model.A, s) @ model.Pi0
    _, moments, _ = model
    if s > moments.S:
        raise LagOutOfRangeError(
            f'lag {s} exceeds the stored maximum lag S={moments.S}')
    return moments.lags[s]


def _unpack(model):
    if isinstance(model, LdsParams):
        return model.C, model.R
    C, _, R = model
    return C, R


def predicted_lagged_cov(model, s, pairs=None, max_dense_p=20000):
    r"""
    Model-implied lagged covariance Λ(s) = C Π_s Cᵀ + δ_{s0} R.

    Args:
        model (`LdsParams` or `tuple`):
            Linear-mode parameters, or `(C, LatentMoments, R)`.
        s (`int`):
            Lag.
        pairs (`PairSet` or `tuple[Tensor, Tensor]`, *optional*):
            0-based (rows, cols) index vectors. When given only these entries
            are evaluated and a vector is returned.
        max_dense_p (`int`, *optional*, defaults to 20000):
            Largest p for which the dense p×p matrix may be formed.

    Returns:
        torch.Tensor: [p, p] matrix, or [len(pairs)] entries.
    """
    C, R = _unpack(model)
    Pi_s = latent_lagged_cov(model, s)

    if pairs is None:
        p = C.shape[0]
        if p > max_dense_p:
            raise ValueError(
                f'refusing to form a dense {p}x{p} covariance '
                f'(limit p={max_dense_p}); request a pair subset instead')
        out = C @ Pi_s @ C.T
        if s == 0:
            out = symmetrize(out) + torch.diag(R)
        return out

    rows, cols = (pairs.rows, pairs.cols) if hasattr(pairs, 'rows') else pairs
    rows = torch.as_tensor(rows, dtype=torch.long)
    cols = torch.as_tensor(cols, dtype=torch.long)
    out = ((C[rows] @ Pi_s) * C[cols]).sum(dim=1)
    if s == 0:
        out = out + torch.where(rows == cols, R[rows], torch.zeros_like(out))
    return out


def simulate(params, T, seed):
    r"""
    Draws one trajectory of length T.

    Args:
        params (`LdsParams`): Model to sample from.
        T (`int`): Number of time points, at least 2.
        seed (`int`): Seed of the simulation stream.

    Returns:
        tuple[torch.Tensor, torch.Tensor]: Observations Y [T, p] and latents
        X [T, n].
    """
    if T < 2:
        raise ValueError(f'need at least 2 time points, got T={T}')
    seed_g = make_generator(seed)
    dtype = params.C.dtype
    n, p = params.n, params.p

    X = torch.empty(T, n, dtype=dtype)
    X[0] = psd_sqrt(params.Pi0) @ torch.randn(n, generator=seed_g, dtype=dtype)
    eta = torch.randn(T - 1, n, generator=seed_g, dtype=dtype) @ psd_sqrt(
        params.Q).T
    eps = torch.randn(T, p, generator=seed_g, dtype=dtype) * \
        params.R.clamp(min=0).sqrt()

    A = params.A
    for t in range(1, T):
        X[t] = A @ X[t - 1] + eta[t - 1]
    Y = X @ params.C.T + eps
    return Y, X
