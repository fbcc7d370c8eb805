# Copyright 2026 The Stitch Authors. All rights reserved.
import logging
import math
import time
from dataclasses import dataclass

import torch
from tqdm import tqdm

from .modules.kalman import kalman_filter_subset, kalman_smooth
from .modules.lds import LdsParams, solve_stationary_covariance
from .modules.observation import CooccurrenceGroups
from .utils.errors import EMMonotonicityError
from .utils.utils import (
    make_generator,
    project_psd,
    spectral_radius,
    substream_seed,
    symmetrize,
    warn,
)

__all__ = [
    'SufficientStats', 'sufficient_statistics', 'm_step',
    'expected_complete_loglik', 'StitchEM', 'fit_sem'
]

_LOG_2PI = math.log(2 * math.pi)


@dataclass
class SufficientStats:
    r"""
    Posterior sufficient statistics of sEM.

    Emission sums run over O_g = {t : group g observed at t}: `count`, `sx`
    and `sxx` are per group ([G], [G, n], [G, n, n]); `sy`, `syy` [p] and
    `syx` [p, n] are per variable over its own O_i. Dynamics sums run over
    all t: `s00` = Σ_{t<T-1} E[x_t x_tᵀ], `s11` = Σ_{t>0} E[x_t x_tᵀ] and
    `s10` = Σ_{t>0} E[x_t x_{t-1}ᵀ].
    """
    count: torch.Tensor
    sx: torch.Tensor
    sxx: torch.Tensor
    sy: torch.Tensor
    syy: torch.Tensor
    syx: torch.Tensor
    s00: torch.Tensor
    s11: torch.Tensor
    s10: torch.Tensor
    first: torch.Tensor
    T: int


def sufficient_statistics(data, groups, posterior):
    n = posterior.means.shape[1]
    p, G, T = data.p, groups.num_groups, data.T
    dtype = torch.float64
    mu = posterior.means

    U = len(data.scheme.segments)
    seg_x = torch.zeros(U, n, dtype=dtype)
    seg_xx = torch.zeros(U, n, n, dtype=dtype)
    sy = torch.zeros(p, dtype=dtype)
    syy = torch.zeros(p, dtype=dtype)
    syx = torch.zeros(p, n, dtype=dtype)
    for u, (seg, idx, block) in enumerate(data.blocks()):
        m = mu[seg.t_start:seg.t_end]
        seg_x[u] = m.sum(dim=0)
        seg_xx[u] = m.T @ m + posterior.cov_sum(seg.t_start, seg.t_end)
        sy[idx] += block.sum(dim=0)
        syy[idx] += (block**2).sum(dim=0)
        syx[idx] += block.T @ m

    M = groups.seg_membership
    lengths = torch.tensor([seg.length for seg in data.scheme.segments],
                           dtype=dtype)
    xx_all = mu.T @ mu + posterior.cov_sum(0, T)
    last = torch.outer(mu[-1], mu[-1]) + posterior.covs[-1]
    first = torch.outer(mu[0], mu[0]) + posterior.covs[0]
    if T > 1:
        s10 = mu[1:].T @ mu[:-1] + posterior.cross_sum(1, T)
    else:
        s10 = torch.zeros(n, n, dtype=dtype)
    return SufficientStats(
        count=M @ lengths,
        sx=M @ seg_x,
        sxx=torch.einsum('gu,uij->gij', M, seg_xx),
        sy=sy,
        syy=syy,
        syx=syx,
        s00=xx_all - last,
        s11=xx_all - first,
        s10=s10,
        first=first,
        T=T)


def _robust_solve(M, rhs, what):
    # solves X M = rhs for symmetric PSD M, with a ridge when M is singular
    L, info = torch.linalg.cholesky_ex(M)
    if info.item() != 0:
        ridge = 1e-8 * max(torch.trace(M).item() / M.shape[0], 1e-12)
        warn(f'{what} is singular, using a ridge of {ridge:.3g}')
        L = torch.linalg.cholesky(M + ridge * torch.eye(M.shape[0],
                                                        dtype=M.dtype))
    return torch.cholesky_solve(rhs.T, L).T


def _emission_residual(stats, g_of, C, d):
    # Σ_{t∈O_i} E[(y_ti − d_i − C_i x_t)²] per variable
    sx = stats.sx[g_of]
    N = stats.count[g_of]
    return (stats.syy - 2 * d * stats.sy - 2 * (C * stats.syx).sum(dim=1) +
            N * d**2 + 2 * d * (C * sx).sum(dim=1) +
            torch.einsum('pi,pij,pj->p', C, stats.sxx[g_of], C))


def m_step(data, posterior, Pi0, groups=None, stats=None):
    r"""
    Closed-form sEM M-step.

    Rows of C and the offset d are the joint least-squares solution over each
    variable's observed times O_i,
    C_i = (Σ_{O_i} y_i E[x]ᵀ − |O_i|⁻¹ Σ y_i Σ E[x]ᵀ)
          (Σ_{O_i} E[x xᵀ] − |O_i|⁻¹ Σ E[x] Σ E[x]ᵀ)⁻¹,
    whose inverse factor is shared within a co-occurrence group. R_i is the
    expected squared residual on O_i; A and Q follow the usual LDS updates.
    The initial covariance is kept.

    Args:
        data (`MaskedTimeSeries`): Observations.
        posterior (`SmoothedPosterior`): E-step output.
        Pi0 (`torch.Tensor`): Initial-state covariance, returned unchanged.
        groups (`CooccurrenceGroups`, *optional*): Groups of `data.scheme`.

    Returns:
        tuple[LdsParams, torch.Tensor]: Parameters and offset d.
    """
    if groups is None:
        groups = CooccurrenceGroups(data.scheme)
    if stats is None:
        stats = sufficient_statistics(data, groups, posterior)
    n = posterior.means.shape[1]
    p, T = data.p, data.T
    g_of = groups.group_of

    C = torch.zeros(p, n, dtype=torch.float64)
    d = torch.zeros(p, dtype=torch.float64)
    for g, members in enumerate(groups.members):
        N = stats.count[g].item()
        if N == 0:
            continue
        sx = stats.sx[g]
        moment = symmetrize(stats.sxx[g] - torch.outer(sx, sx) / N)
        rhs = stats.syx[members] - torch.outer(stats.sy[members], sx) / N
        C[members] = _robust_solve(moment, rhs, f'latent moment of group {g}')
        d[members] = (stats.sy[members] - C[members] @ sx) / N

    N = stats.count[g_of].clamp(min=1)
    var_floor = 1e-10 * (stats.syy / N).clamp(min=1e-12)
    R = (_emission_residual(stats, g_of, C, d) / N).clamp(min=var_floor)

    A = _robust_solve(stats.s00, stats.s10, 'latent second moment')
    Q = symmetrize(stats.s11 - A @ stats.s10.T) / max(T - 1, 1)
    return LdsParams(A=A, C=C, Q=Q, R=R, Pi0=Pi0.clone()), d


def expected_complete_loglik(params, offset, data, posterior, groups=None):
    r"""
    EM auxiliary function E[log p(x, y)] under `posterior`, with initial state
    N(0, Pi0) and emissions N(d + C x_t, R) on the observed entries.
    """
    if groups is None:
        groups = CooccurrenceGroups(data.scheme)
    stats = sufficient_statistics(data, groups, posterior)
    A, Q, Pi0 = params.A, params.Q, params.Pi0
    n, T = params.n, data.T

    ll = -0.5 * (n * _LOG_2PI + torch.logdet(Pi0) +
                 torch.trace(torch.linalg.solve(Pi0, stats.first)))
    if T > 1:
        dyn = stats.s11 - A @ stats.s10.T - stats.s10 @ A.T + \
            A @ stats.s00 @ A.T
        ll = ll - 0.5 * ((T - 1) * (n * _LOG_2PI + torch.logdet(Q)) +
                         torch.trace(torch.linalg.solve(Q, dyn)))
    g_of = groups.group_of
    N = stats.count[g_of]
    resid = _emission_residual(stats, g_of, params.C, offset)
    observed = N > 0
    ll = ll - 0.5 * (N[observed] * (_LOG_2PI + torch.log(params.R[observed])) +
                     resid[observed] / params.R[observed]).sum()
    return ll.item()


class StitchEM:

    def __init__(self, config):
        r"""
        Initializes the stitching EM fitter.

        Args:
            config (`EasyDict`):
                Object containing sEM parameters initialized from
                `stitch.configs.sem_cfg`.
        """
        self.config = config
        self.offset = None
        self.restart_logliks = []

    def random_init(self, data, seed):
        """C ~ N(0, 1/n), R at half the observed variance, A = 0.9·I,
        Q = 0.19·I (so that Pi0 = I)."""
        n = int(self.config.n)
        assert n <= data.p, f'latent dimension n={n} exceeds p={data.p}'
        seed_g = make_generator(seed)
        eye = torch.eye(n, dtype=torch.float64)
        C = torch.randn(data.p, n, generator=seed_g,
                        dtype=torch.float64) / math.sqrt(n)
        R = 0.5 * data.observed_variance(ddof=1)
        return LdsParams(A=0.9 * eye, C=C, Q=0.19 * eye, R=R, Pi0=eye.clone())

    def condition_init(self, data, init):
        r"""
        Copy of a given starting point that the Kalman recursions accept: R is
        floored at `init_var_floor` times the observed variance and Q, Π₀
        are projected onto the PSD cone plus `init_ridge` times their mean
        eigenvalue.
        """
        cfg = self.config
        params = init.clone()
        floor = (cfg.init_var_floor * data.observed_variance(ddof=1)).clamp(
            min=1e-12)
        params.R = torch.maximum(params.R, floor)
        eye = torch.eye(params.n, dtype=torch.float64)
        for name in ('Q', 'Pi0'):
            M = project_psd(getattr(params, name))
            ridge = cfg.init_ridge * (torch.trace(M).item() / params.n + 1e-12)
            setattr(params, name, M + ridge * eye)
        return params

    def _run(self, data, groups, params, progress):
        cfg = self.config
        tol = float(cfg.cov_converge_tol)
        offset = data.per_variable_mean.clone()
        trace = []
        start = time.perf_counter()
        prev = None
        for it in tqdm(range(int(cfg.max_iters) + 1), disable=not progress):
            filtered = kalman_filter_subset(params, data, tol, offset=offset)
            ll = filtered.loglik
            trace.append({'iter': it, 'loglik': ll,
                          'wall_time_s': time.perf_counter() - start})
            if prev is not None:
                scale = max(abs(prev), 1.0)
                if ll < prev - cfg.monotonicity_tol * scale:
                    raise EMMonotonicityError(
                        f'log-likelihood decreased from {prev:.10g} to '
                        f'{ll:.10g} at iteration {it}')
                if ll - prev < cfg.loglik_rel_tol * scale:
                    break
            if it == int(cfg.max_iters):
                break
            posterior = kalman_smooth(params, filtered, tol)
            params, offset = m_step(data, posterior, params.Pi0, groups=groups)
            prev = ll
        return params, offset, trace

    def fit(self, data, init=None, progress=True):
        r"""
        Runs sEM.

        Args:
            data (`MaskedTimeSeries`):
                Observations with their scheme.
            init (`LdsParams`, *optional*):
                Starting point. Without it `restarts` random initializations
                are fitted and the one with the highest final log-likelihood
                is kept.
            progress (`bool`, *optional*, defaults to True):
                Show a progress bar.

        Returns:
            tuple: Fitted `LdsParams` and the log-likelihood trace as a list
            of dicts with keys iter, loglik and wall_time_s.
        """
        cfg = self.config
        groups = CooccurrenceGroups(data.scheme)
        if init is not None:
            starts = [self.condition_init(data, init)]
        else:
            starts = [
                self.random_init(data,
                                 substream_seed(cfg.seed, f'init/{k}'))
                for k in range(int(cfg.restarts))
            ]

        best = None
        self.restart_logliks = []
        for k, params in enumerate(starts):
            params, offset, trace = self._run(data, groups, params, progress)
            final = trace[-1]['loglik']
            self.restart_logliks.append(final)
            logging.info(f"sEM run {k}: {len(trace) - 1} iterations, "
                         f"log-likelihood {final:.6f}.")
            if best is None or final > best[2][-1]['loglik']:
                best = (params, offset, trace)

        params, offset, trace = best
        self.offset = offset
        rho = spectral_radius(params.A)
        if rho < 1.0:
            params.Pi0 = solve_stationary_covariance(params.A, params.Q)
        else:
            warn(f'sEM estimate of A is unstable (spectral radius {rho:.4f}); '
                 'keeping the initial covariance as Pi0')
        return params, trace


def fit_sem(data, cfg, init=None, progress=True):
    """Functional wrapper around `StitchEM(cfg).fit(data, init)`."""
    return StitchEM(cfg).fit(data, init=init, progress=progress)
