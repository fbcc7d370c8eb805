# Copyright 2026 The Stitch Authors. All rights reserved.
import torch

from ..utils.utils import project_psd, symmetrize, warn
from .lds import LdsParams

__all__ = ['block_hankel', 'hankel_ssid']


def block_hankel(lagged_covs, K, L):
    """pK × pL matrix with blocks H[k, j] = Λ(k + j + 1), k, j 0-based."""
    rows = [
        torch.cat([lagged_covs[k + j + 1] for j in range(L)], dim=1)
        for k in range(K)
    ]
    return torch.cat(rows, dim=0)


def _stationary_from_moments(C, A, Lambda0, G):
    # least squares in vec_r(Π₀) of offdiag(C Π₀ Cᵀ) = offdiag(Λ(0)) and
    # A Π₀ Cᵀ = G, using vec_r(X Y Z) = (X ⊗ Zᵀ) vec_r(Y)
    p, n = C.shape
    rows, cols = torch.triu_indices(p, p, offset=1)
    pairs = (C[rows, :, None] * C[cols, None, :]).reshape(-1, n * n)
    design = torch.cat([pairs, torch.kron(A, C)])
    target = torch.cat([Lambda0[rows, cols], G.reshape(-1)])
    sol = torch.linalg.lstsq(design, target[:, None]).solution
    return sol.reshape(n, n)


def hankel_ssid(lagged_covs, n, K, L, rank_rtol=1e-10):
    r"""
    Classical covariance-based subspace identification for fully observed
    systems.

    The block Hankel matrix of Λ(1)..Λ(K+L-1) factors as observability times
    controllability, H = O·Con. Its rank-n SVD gives O = U S^{1/2}; C is the
    first block row of O and A solves the shift equation O[p:] = O[:-p] A in
    least squares. Π₀ is the least-squares solution of the off-diagonal of
    Λ(0) = C Π₀ Cᵀ + R together with the first block column of Con, A Π₀ Cᵀ,
    so A is never inverted; R is what remains on the diagonal of Λ(0).

    Args:
        lagged_covs (`list[torch.Tensor]`):
            Λ(s) for s = 0..K+L-1, each [p, p].
        n (`int`):
            Latent dimension.
        K (`int`):
            Number of block rows.
        L (`int`):
            Number of block columns.
        rank_rtol (`float`, *optional*, defaults to 1e-10):
            Singular values below rank_rtol·σ₁ count as zero for the rank
            warning.

    Returns:
        LdsParams
    """
    assert len(lagged_covs) >= K + L, \
        f'need lagged covariances up to lag {K + L - 1}'
    assert K >= 2 and L >= 1, 'need K >= 2 block rows and L >= 1 block columns'
    p = lagged_covs[0].shape[0]
    assert n <= p * min(K, L), f'n={n} exceeds the Hankel matrix size'

    H = block_hankel(lagged_covs, K, L)
    U, sv, Vh = torch.linalg.svd(H, full_matrices=False)
    rank = int((sv > rank_rtol * sv[0]).sum()) if sv[0] > 0 else 0
    if rank < n:
        warn(f'block Hankel matrix has effective rank {rank} < n={n}; '
             'the recovered model is not identifiable')

    root = sv[:n].sqrt()
    O = U[:, :n] * root
    Con = root[:, None] * Vh[:n]

    C = O[:p]
    A = torch.linalg.lstsq(O[:-p], O[p:]).solution
    Pi0 = project_psd(_stationary_from_moments(C, A, lagged_covs[0],
                                               Con[:, :p]))
    Q = project_psd(Pi0 - A @ Pi0 @ A.T)
    R = (torch.diagonal(lagged_covs[0]) -
         ((C @ Pi0) * C).sum(dim=1)).clamp(min=0.0)
    return LdsParams(A=A, C=C, Q=symmetrize(Q), R=R, Pi0=Pi0)
