# Copyright 2026 The Stitch Authors. All rights reserved.
import logging
import math

import torch
from tqdm import tqdm

from ..utils.errors import AlignmentUnderdeterminedError, RankDeficientError
from ..utils.utils import make_generator, project_psd, spectral_radius, warn
from .lds import LdsParams

__all__ = ['fa_em', 'posthoc_align', 'estimate_dynamics', 'fa_posthoc']

_LOG_2PI = math.log(2 * math.pi)


def _fa_posterior(C, R):
    # Woodbury: β = Cᵀ Σ⁻¹ = (I + Cᵀ R⁻¹ C)⁻¹ Cᵀ R⁻¹ with Σ = C Cᵀ + diag(R)
    n = C.shape[1]
    CtRi = C.T / R
    M = torch.eye(n, dtype=C.dtype) + CtRi @ C
    L = torch.linalg.cholesky(M)
    beta = torch.cholesky_solve(CtRi, L)
    logdet = torch.log(R).sum() + 2 * torch.log(torch.diagonal(L)).sum()
    return beta, logdet


def _fa_loglik(C, R, S, N):
    beta, logdet = _fa_posterior(C, R)
    # tr(Σ⁻¹ S) = tr(R⁻¹ S) − tr(β S R⁻¹ C)
    trace = (torch.diagonal(S) / R).sum() - torch.trace(beta @ (S / R) @ C)
    q = C.shape[0]
    return -0.5 * N * (q * _LOG_2PI + logdet + trace).item()


def fa_em(data_block, n, iters=100, seed=0, progress=False):
    r"""
    Factor analysis y = C z + ε, z ~ N(0, I), ε ~ N(0, diag(R)), fitted by EM.

    Args:
        data_block (`torch.Tensor`):
            Fully observed samples, shape [N, q].
        n (`int`):
            Number of factors.
        iters (`int`, *optional*, defaults to 100):
            EM iterations.
        seed (`int`, *optional*, defaults to 0):
            Seed of the loading initialization.
        progress (`bool`, *optional*, defaults to False):
            Show a progress bar.

    Returns:
        tuple: Loadings C [q, n], noise variances R [q], and the
        log-likelihood after every iteration.
    """
    if iters < 1:
        raise ValueError(f'need at least one EM iteration, got iters={iters}')
    Y = torch.as_tensor(data_block, dtype=torch.float64)
    N, q = Y.shape
    if N < 2 or not 0 < n <= q:
        raise ValueError(f'cannot fit {n} factors to a block of shape {N}x{q}')

    Yc = Y - Y.mean(dim=0)
    S = Yc.T @ Yc / N
    var = torch.diagonal(S).clone()
    floor = 1e-6 * var.clamp(min=1e-12)

    seed_g = make_generator(seed)
    C = torch.randn(q, n, generator=seed_g, dtype=torch.float64) * \
        (var.mean() / n).sqrt()
    R = (0.5 * var).clamp(min=floor)

    trace = []
    for _ in tqdm(range(iters), disable=not progress):
        beta, _ = _fa_posterior(C, R)
        SbT = S @ beta.T
        Ezz = torch.eye(n, dtype=torch.float64) - beta @ C + beta @ SbT
        C = torch.linalg.solve(Ezz, SbT.T).T
        R = (var - (C * SbT).sum(dim=1)).clamp(min=floor)
        trace.append(_fa_loglik(C, R, S, N))
    return C, R, trace


def posthoc_align(estimates, reference=0, p=None):
    r"""
    Chains per-session loadings into one coordinate system.

    Session k is mapped onto session k-1 (or k+1 when it precedes the
    reference) by the least-squares base change M_k minimizing
    ‖C_k[J] M_k − C_{k-1}[J]‖_F on the shared variables J. Rows seen by
    several sessions are averaged after alignment.

    Args:
        estimates (`list[tuple[Tensor, Tensor]]`):
            Per session, the 0-based variable indices and their loadings.
        reference (`int`, *optional*, defaults to 0):
            Session whose latent coordinates are kept.
        p (`int`, *optional*):
            Total number of variables, defaults to the largest index + 1.

    Returns:
        torch.Tensor: Global loadings [p, n].
    """
    num = len(estimates)
    assert 0 <= reference < num, f'reference {reference} out of range'
    idx = [torch.as_tensor(i, dtype=torch.long) for i, _ in estimates]
    n = estimates[0][1].shape[1]
    if p is None:
        p = int(max(i.max() for i in idx)) + 1

    aligned = [None] * num
    aligned[reference] = estimates[reference][1]
    order = list(range(reference + 1, num)) + list(
        range(reference - 1, -1, -1))
    for k in order:
        prev = k - 1 if k > reference else k + 1
        C_k = estimates[k][1]
        pos_k = {v: r for r, v in enumerate(idx[k].tolist())}
        shared = [(pos_k[v], r) for r, v in enumerate(idx[prev].tolist())
                  if v in pos_k]
        rows_k = torch.tensor([a for a, _ in shared], dtype=torch.long)
        rows_prev = torch.tensor([b for _, b in shared], dtype=torch.long)
        rank = int(torch.linalg.matrix_rank(C_k[rows_k])) if shared else 0
        if rank < n:
            raise AlignmentUnderdeterminedError(
                f'sessions {prev} and {k} share {len(shared)} variables with '
                f'loading rank {rank} < n={n}', sessions=(prev, k))
        M = torch.linalg.lstsq(C_k[rows_k], aligned[prev][rows_prev]).solution
        aligned[k] = C_k @ M

    total = torch.zeros(p, n, dtype=torch.float64)
    count = torch.zeros(p, dtype=torch.float64)
    for i, C_k in zip(idx, aligned):
        total[i] += C_k
        count[i] += 1
    if (count == 0).any():
        missing = int((count == 0).sum())
        raise ValueError(f'{missing} variables are covered by no session')
    return total / count[:, None]


def estimate_dynamics(data, C, R):
    r"""
    Attaches linear dynamics to a subspace estimate.

    Each observation is projected onto the latent space by weighted least
    squares, x̂_t = (C_tᵀ R_t⁻¹ C_t)⁻¹ C_tᵀ R_t⁻¹ ỹ_t, with C_t, R_t restricted to
    Ω_t. The projection noise covariance (C_tᵀ R_t⁻¹ C_t)⁻¹ is removed from
    the lag-0 moment, A comes from the lag-1 moment and Q closes the
    Lyapunov equation.

    Returns:
        tuple[torch.Tensor, torch.Tensor, torch.Tensor]: A, Pi0 and Q.
    """
    n = C.shape[1]
    Yc = data.centered()
    X = torch.zeros(data.T, n, dtype=torch.float64)
    noise = torch.zeros(n, n, dtype=torch.float64)
    R = R.clamp(min=1e-12)
    for k, seg in enumerate(data.scheme.segments):
        idx = seg.indices()
        Ct = C[idx]
        info = Ct.T @ (Ct / R[idx, None])
        if idx.numel() < n or int(torch.linalg.matrix_rank(info)) < n:
            raise RankDeficientError(
                f'segment {k} observes a rank-deficient part of the loadings')
        proj = torch.linalg.solve(info, Ct.T / R[idx])
        X[seg.t_start:seg.t_end] = Yc[seg.t_start:seg.t_end, idx] @ proj.T
        noise += seg.length * torch.linalg.inv(info)

    T = data.T
    Sigma0 = X.T @ X / T - noise / T
    Sigma1 = X[1:].T @ X[:-1] / (T - 1)
    Pi0 = project_psd(Sigma0, floor=1e-8 * torch.diagonal(Sigma0).abs().max())
    A = torch.linalg.solve(Pi0, Sigma1.T).T
    Q = project_psd(Pi0 - A @ Pi0 @ A.T)
    return A, Pi0, Q


def fa_posthoc(data, n, iters=100, reference=0, seed=0, progress=False):
    r"""
    Baseline: factor analysis per session, sequential alignment on overlaps,
    then dynamics attached by `estimate_dynamics`.

    Args:
        data (`MaskedTimeSeries`): Observations with their scheme.
        n (`int`): Latent dimension.
        iters (`int`, *optional*, defaults to 100): FA EM iterations.
        reference (`int`, *optional*, defaults to 0): Reference session.
        seed (`int`, *optional*, defaults to 0): Seed of the FA inits.

    Returns:
        tuple[LdsParams, list]: Parameters and per-session FA traces.
    """
    estimates, traces = [], []
    for k, (seg, idx, block) in enumerate(data.blocks()):
        logging.info(f"FA on session {k}: {block.shape[0]} time points, "
                     f"{idx.numel()} variables.")
        C_k, R_k, trace = fa_em(block, n, iters=iters, seed=seed + k,
                                progress=progress)
        estimates.append((idx, C_k, R_k))
        traces.append(trace)

    C = posthoc_align([(i, C_k) for i, C_k, _ in estimates],
                      reference=reference, p=data.p)
    R = torch.zeros(data.p, dtype=torch.float64)
    count = torch.zeros(data.p, dtype=torch.float64)
    for i, _, R_k in estimates:
        R[i] += R_k
        count[i] += 1
    R = R / count.clamp(min=1)

    A, Pi0, Q = estimate_dynamics(data, C, R)
    rho = spectral_radius(A)
    if rho >= 1.0:
        warn(f'post-hoc dynamics estimate is unstable (spectral radius '
             f'{rho:.4f})')
    return LdsParams(A=A, C=C, Q=Q, R=R, Pi0=Pi0), traces
