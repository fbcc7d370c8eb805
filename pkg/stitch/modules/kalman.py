# Copyright 2026 The Stitch Authors. All rights reserved.
import math
from dataclasses import dataclass

import torch

from ..utils.errors import InnovationSingularError
from ..utils.utils import symmetrize

__all__ = ['FilteredMoments', 'SmoothedPosterior', 'kalman_filter_subset',
           'kalman_smooth']

_LOG_2PI = math.log(2 * math.pi)


@dataclass
class FilteredMoments:
    r"""
    Output of `kalman_filter_subset`.

    Covariances are lists of length T; inside a frozen stretch every entry
    refers to the same tensor. `frozen[t]` marks time points whose predicted
    and filtered covariances equal the frozen values of their segment.
    """
    means_pred: torch.Tensor
    covs_pred: list
    means: torch.Tensor
    covs: list
    loglik: float
    frozen: torch.Tensor


@dataclass
class SmoothedPosterior:
    r"""
    Posterior moments E[x_t], Cov[x_t] and Cov[x_t, x_{t-1}] given all data.

    `cross[t]` holds Cov[x_t, x_{t-1}] for t >= 1; `cross[0]` is None.
    """
    means: torch.Tensor
    covs: list
    cross: list
    loglik: float

    @property
    def T(self):
        return self.means.shape[0]

    def cov_sum(self, t0, t1):
        """Σ_{t in [t0, t1)} Cov[x_t]."""
        return torch.stack(self.covs[t0:t1]).sum(dim=0)

    def cross_sum(self, t0, t1):
        """Σ_{t in [t0, t1)} Cov[x_t, x_{t-1}], with t0 >= 1."""
        return torch.stack(self.cross[t0:t1]).sum(dim=0)


def _offset_for(params, offset):
    if offset is None:
        return torch.zeros(params.p, dtype=params.C.dtype)
    return offset


def kalman_filter_subset(params, data, cov_converge_tol=1e-9, offset=None):
    r"""
    Kalman filter restricted to the observed rows C_(Ω_t,:), R_(Ω_t).

    Within each segment the filtered covariance is frozen once it moves by
    less than `cov_converge_tol` in Frobenius norm between consecutive time
    points; the gain is then reused and the remaining innovations of the
    segment are processed in one batch. A tolerance of 0 disables freezing.

    Args:
        params (`LdsParams`):
            Model; the initial state is N(0, Pi0).
        data (`MaskedTimeSeries`):
            Observations and their scheme.
        cov_converge_tol (`float`, *optional*, defaults to 1e-9):
            Freezing tolerance.
        offset (`torch.Tensor`, *optional*):
            Per-variable offset d subtracted from y before filtering.

    Returns:
        FilteredMoments
    """
    A, C, Q, R = params.A, params.C, params.Q, params.R
    n, T = params.n, data.T
    dtype = C.dtype
    d = _offset_for(params, offset)
    eye = torch.eye(n, dtype=dtype)

    means_pred = torch.zeros(T, n, dtype=dtype)
    means = torch.zeros(T, n, dtype=dtype)
    covs_pred = [None] * T
    covs = [None] * T
    frozen = torch.zeros(T, dtype=torch.bool)
    loglik = 0.0

    for seg in data.scheme.segments:
        idx = seg.indices()
        Ct, Rt = C[idx], R[idx]
        Yo = data.Y[seg.t_start:seg.t_end, idx] - d[idx]
        k = idx.numel()
        freeze = None

        for t in range(seg.t_start, seg.t_end):
            if t == 0:
                m_pred, P_pred = torch.zeros(n, dtype=dtype), params.Pi0
            else:
                m_pred = A @ means[t - 1]
                P_pred = symmetrize(A @ covs[t - 1] @ A.T + Q)
            means_pred[t], covs_pred[t] = m_pred, P_pred

            if k == 0:
                K = torch.zeros(n, 0, dtype=dtype)
                L = torch.zeros(0, 0, dtype=dtype)
                means[t], covs[t] = m_pred, P_pred
            else:
                S = symmetrize(Ct @ P_pred @ Ct.T) + torch.diag(Rt)
                L, info = torch.linalg.cholesky_ex(S)
                if info.item() != 0:
                    raise InnovationSingularError(
                        'innovation covariance is not positive definite', t=t)
                K = torch.cholesky_solve(Ct @ P_pred, L).T
                e = Yo[t - seg.t_start] - Ct @ m_pred
                white = torch.linalg.solve_triangular(
                    L, e[:, None], upper=False)[:, 0]
                loglik -= 0.5 * (k * _LOG_2PI + 2 * torch.log(
                    torch.diagonal(L)).sum().item() + white.dot(white).item())
                means[t] = m_pred + K @ e
                I_KC = eye - K @ Ct
                covs[t] = symmetrize(I_KC @ P_pred @ I_KC.T + (K * Rt) @ K.T)

            if t > seg.t_start and torch.linalg.norm(
                    covs[t] - covs[t - 1]).item() < cov_converge_tol:
                freeze = (t, K, L)
                break

        if freeze is None or freeze[0] == seg.t_end - 1:
            continue

        # steady state for the rest of the segment
        tf, K, L = freeze
        P_pred, P_f = covs_pred[tf], covs[tf]
        frozen[tf:seg.t_end] = True
        for t in range(tf + 1, seg.t_end):
            covs_pred[t], covs[t] = P_pred, P_f
        Yr = Yo[tf + 1 - seg.t_start:]
        Ky = Yr @ K.T
        F = (eye - K @ Ct) @ A
        m = means[tf]
        for j, t in enumerate(range(tf + 1, seg.t_end)):
            means_pred[t] = A @ m
            m = F @ m + Ky[j]
            means[t] = m
        if k > 0:
            E = Yr - means_pred[tf + 1:seg.t_end] @ Ct.T
            white = torch.linalg.solve_triangular(L, E.T, upper=False)
            loglik -= 0.5 * (E.shape[0] *
                             (k * _LOG_2PI +
                              2 * torch.log(torch.diagonal(L)).sum().item()) +
                             (white**2).sum().item())

    return FilteredMoments(means_pred=means_pred, covs_pred=covs_pred,
                           means=means, covs=covs, loglik=loglik,
                           frozen=frozen)


def kalman_smooth(params, filtered, cov_converge_tol=1e-9):
    r"""
    Rauch-Tung-Striebel smoother on top of `kalman_filter_subset`.

    Where the filter froze, the smoother gain is reused, and the smoothed
    covariance is frozen once it moves by less than `cov_converge_tol`.

    Returns:
        SmoothedPosterior
    """
    A = params.A
    T = filtered.means.shape[0]
    means = torch.empty_like(filtered.means)
    covs = [None] * T
    cross = [None] * T
    means[T - 1] = filtered.means[T - 1]
    covs[T - 1] = filtered.covs[T - 1]

    J = None
    settled = False
    for t in range(T - 2, -1, -1):
        # J_t = J_{t+1} when P_f[t], P_pred[t+1], P_pred[t+2] are all frozen
        reuse = J is not None and t + 2 < T and bool(
            filtered.frozen[t:t + 3].all())
        if not reuse:
            P_next = filtered.covs_pred[t + 1]
            J = torch.linalg.solve(P_next, A @ filtered.covs[t]).T
            settled = False
        means[t] = filtered.means[t] + J @ (means[t + 1] -
                                            filtered.means_pred[t + 1])
        if settled:
            covs[t], cross[t + 1] = covs[t + 1], cross[t + 2]
            continue
        covs[t] = symmetrize(filtered.covs[t] + J @ (
            covs[t + 1] - filtered.covs_pred[t + 1]) @ J.T)
        cross[t + 1] = covs[t + 1] @ J.T
        settled = reuse and torch.linalg.norm(
            covs[t] - covs[t + 1]).item() < cov_converge_tol

    return SmoothedPosterior(means=means, covs=covs, cross=cross,
                             loglik=filtered.loglik)
