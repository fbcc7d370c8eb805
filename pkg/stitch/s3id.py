# Copyright 2026 The Stitch Authors. All rights reserved.
import logging
import math
import time
from dataclasses import dataclass

import torch
import torch.nn as nn
from tqdm import tqdm

from .modules.lds import LatentMoments, LdsParams, predicted_lagged_cov
from .modules.observation import (
    CooccurrenceGroups,
    empirical_lagged_cov,
    sample_pairs,
)
from .utils.errors import NonFiniteGradientError
from .utils.utils import (
    make_generator,
    project_psd,
    spectral_radius,
    substream_seed,
    symmetrize,
    warn,
)

__all__ = [
    'S3idState', 'StitchS3ID', 'init_state', 'moment_init_state', 'loss',
    'grad_batch', 'grad_linear_mode', 'adam_step', 'sample_batch', 'fit_s3id'
]


@dataclass
class S3idState:
    r"""
    Optimization state of S3ID.

    In linear mode the dynamics are `A` and `Pi0` with Π_s = A^s Π₀; in
    nonlinear mode `Pis` holds the free lagged latent covariances
    [S+1, n, n]. The ADAM moments and step counter live in `optimizer`.
    """
    C: nn.Parameter
    R: nn.Parameter
    mode: str
    S: int
    A: nn.Parameter = None
    Pi0: nn.Parameter = None
    Pis: nn.Parameter = None
    optimizer: torch.optim.Optimizer = None
    step: int = 0

    @property
    def n(self):
        return self.C.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def parameters(self):
        if self.mode == 'linear':
            return {'C': self.C, 'R': self.R, 'A': self.A, 'Pi0': self.Pi0}
        return {'C': self.C, 'R': self.R, 'Pis': self.Pis}

    @torch.no_grad()
    def latent_lags(self):
        """Π_s for s = 0..S, shape [S+1, n, n]."""
        if self.mode == 'nonlinear':
            return self.Pis.detach().clone()
        lags = [self.Pi0.detach()]
        for _ in range(self.S):
            lags.append(self.A.detach() @ lags[-1])
        return torch.stack(lags)

    @torch.no_grad()
    def model(self):
        """Current parameters as a model for `predicted_lagged_cov`."""
        C, R = self.C.detach().clone(), self.R.detach().clone()
        if self.mode == 'linear':
            n = self.n
            return LdsParams(A=self.A.detach().clone(), C=C,
                             Q=torch.zeros(n, n, dtype=C.dtype), R=R,
                             Pi0=self.Pi0.detach().clone())
        return (C, LatentMoments(lags=list(self.Pis.detach().clone())), R)


def _make_optimizer(params, adam):
    return torch.optim.Adam(
        list(params.values()),
        lr=adam.step_size,
        betas=(adam.beta1, adam.beta2),
        eps=adam.epsilon)


def init_state(data, cfg):
    r"""
    Random S3ID initialization: C with i.i.d. N(0, 1/n) entries, R at half
    the observed variance, Π₀ = I and A = 0.9·I (Π_s = 0.9^s·I in nonlinear
    mode).

    Args:
        data (`MaskedTimeSeries`): Observations.
        cfg (`EasyDict`): S3ID config, see `stitch.configs.s3id_cfg`.

    Returns:
        S3idState
    """
    p, n, S = data.p, int(cfg.n), int(cfg.S)
    assert n <= p, f'latent dimension n={n} exceeds p={p}'
    if data.T < 2 or float(data.observed_count.sum()) == 0:
        raise ValueError('cannot initialize S3ID from empty data')
    dtype = torch.float64
    seed_g = make_generator(substream_seed(cfg.seed, 'init'))
    C = torch.randn(p, n, generator=seed_g, dtype=dtype) / math.sqrt(n)
    R = 0.5 * data.observed_variance(ddof=1)

    state = S3idState(C=nn.Parameter(C), R=nn.Parameter(R), mode=cfg.mode, S=S)
    eye = torch.eye(n, dtype=dtype)
    if cfg.mode == 'linear':
        state.A = nn.Parameter(0.9 * eye)
        state.Pi0 = nn.Parameter(eye.clone())
    elif cfg.mode == 'nonlinear':
        state.Pis = nn.Parameter(
            torch.stack([0.9**s * eye for s in range(S + 1)]))
    else:
        raise ValueError(f'unsupported S3ID mode {cfg.mode!r}')
    state.optimizer = _make_optimizer(state.parameters(), cfg.adam)
    return state


def _group_projections(Yc, V, groups):
    """Z[t, h] = Σ_{j∈h} Yc[t, j] V_j, shape [T, G, n]."""
    Z = torch.zeros(Yc.shape[0], groups.num_groups, V.shape[1],
                    dtype=V.dtype)
    for h, members in enumerate(groups.members):
        Z[:, h] = Yc[:, members] @ V[members]
    return Z


def _group_grams(V, groups):
    outer = V[:, :, None] * V[:, None, :]
    return _group_sums(outer, groups.group_of, groups.num_groups, 0)


def _pair_weights(groups, s):
    # 1/(T^s - 1) on co-observed group pairs, the divisor of the empirical
    # covariances
    counts = groups.counts(s)
    valid = (counts > 1).to(torch.float64)
    return valid, valid / (counts - 1).clamp(min=1)


def _als_update(Yc, V, groups, valid, weights, var, ridge):
    r"""
    One half-step of alternating least squares for the lag-0 covariances:
    row i of the result minimizes Σ_j (u_i·v_j − Λ̃(0)_ij)² over the
    variables j ≠ i co-observed with i.
    """
    n = V.shape[1]
    eye = torch.eye(n, dtype=V.dtype)
    Z = _group_projections(Yc, V, groups)
    Kmix = torch.einsum('gh,hij->gij', valid, _group_grams(V, groups))
    out = torch.zeros_like(V)
    for g, members in enumerate(groups.members):
        mix = torch.einsum('h,thn->tn', weights[g], Z)
        Vm = V[members]
        own = valid[g, g]
        rhs = Yc[:, members].T @ mix - own * var[members, None] * Vm
        K = Kmix[g] - own * Vm[:, :, None] * Vm[:, None, :]
        lam = ridge * (torch.trace(Kmix[g]).item() / n + 1e-12)
        out[members] = torch.linalg.solve(K + lam * eye,
                                          rhs[:, :, None]).squeeze(-1)
    return out


def _latent_lag_ls(Z, C, groups, s, var, ridge):
    r"""
    Least-squares Π_s for fixed C over the co-observed pairs at lag s,
    min Σ_{(i,j)} (c_i Π_s c_jᵀ − Λ̃(s)_ij)², leaving out the variances at
    lag 0.
    """
    T, n = Z.shape[0], C.shape[1]
    valid, weights = _pair_weights(groups, s)
    K = _group_grams(C, groups)
    Kmix = torch.einsum('gh,hij->gij', valid, K)
    N = torch.einsum('gab,gcd->acbd', K, Kmix).reshape(n * n, n * n)
    Zmix = torch.einsum('gh,thc->tgc', weights, Z[:T - s])
    M = torch.einsum('tga,tgc->ac', Z[s:], Zmix)
    if s == 0:
        own = torch.diagonal(valid)[groups.group_of]
        Phi = (C[:, :, None] * C[:, None, :]).reshape(-1, n * n)
        N = N - Phi.T @ (own[:, None] * Phi)
        M = M - C.T @ ((own * var)[:, None] * C)
    lam = ridge * (torch.trace(N).item() / (n * n) + 1e-12)
    eye = torch.eye(n * n, dtype=N.dtype)
    return torch.linalg.solve(N + lam * eye, M.reshape(-1)).reshape(n, n)


@torch.no_grad()
def moment_init_state(data, cfg, groups=None):
    r"""
    Data-driven S3ID initialization from the observed covariances.

    The column space of C comes from alternating least squares on the
    co-observed lag-0 covariances (off-diagonal entries only, so private
    noise does not enter). With C orthonormal, every Π_s is the least-squares
    fit to the co-observed lag-s covariances; R takes the remaining observed
    variance and, in linear mode, A solves Π_s ≈ A Π_{s-1} for s = 1..S.
    Finally the basis is scaled so that tr(Π₀) = n. Every pass over the data
    costs O(T·p·n).

    Args:
        data (`MaskedTimeSeries`): Observations.
        cfg (`EasyDict`): S3ID config, see `stitch.configs.s3id_cfg`.
        groups (`CooccurrenceGroups`, *optional*): Groups of `data.scheme`.

    Returns:
        S3idState
    """
    p, n, S = data.p, int(cfg.n), int(cfg.S)
    assert n <= p, f'latent dimension n={n} exceeds p={p}'
    if data.T < 2 or float(data.observed_count.sum()) == 0:
        raise ValueError('cannot initialize S3ID from empty data')
    if groups is None:
        groups = CooccurrenceGroups(data.scheme)
    dtype = torch.float64
    ridge = 1e-8
    seed_g = make_generator(substream_seed(cfg.seed, 'init'))
    Yc = data.centered()
    var = data.observed_variance(ddof=1)

    valid, weights = _pair_weights(groups, 0)
    V = torch.randn(p, n, generator=seed_g, dtype=dtype) / math.sqrt(n)
    for _ in range(int(cfg.init_iters)):
        U = _als_update(Yc, V, groups, valid, weights, var, ridge)
        V = _als_update(Yc, U, groups, valid, weights, var, ridge)
    C = torch.linalg.qr(U).Q

    Z = _group_projections(Yc, C, groups)
    Pis = torch.stack(
        [_latent_lag_ls(Z, C, groups, s, var, ridge) for s in range(S + 1)])
    Pis[0] = symmetrize(Pis[0])
    Pi0 = project_psd(Pis[0])
    R = (var - ((C @ Pi0) * C).sum(dim=1)).clamp(min=0.0)

    scale = torch.trace(Pi0).item() / n
    if scale > 0:
        C = C * math.sqrt(scale)
        Pis = Pis / scale
        Pi0 = Pi0 / scale

    state = S3idState(C=nn.Parameter(C), R=nn.Parameter(R), mode=cfg.mode, S=S)
    if cfg.mode == 'linear':
        X = Pis[:-1].permute(1, 0, 2).reshape(n, -1)
        Y = Pis[1:].permute(1, 0, 2).reshape(n, -1)
        A = torch.linalg.lstsq(X.T, Y.T).solution.T
        rho = spectral_radius(A)
        if rho >= 0.99:
            A = A * (0.99 / rho)
        state.A = nn.Parameter(A)
        state.Pi0 = nn.Parameter(Pi0)
    elif cfg.mode == 'nonlinear':
        Pis[0] = Pi0
        state.Pis = nn.Parameter(Pis)
    else:
        raise ValueError(f'unsupported S3ID mode {cfg.mode!r}')
    state.optimizer = _make_optimizer(state.parameters(), cfg.adam)
    logging.info(f"S3ID moment initialization after {cfg.init_iters} ALS "
                 f"iterations, tr(R) = {R.sum().item():.4g}.")
    return state


def _lag_weights(cfg):
    if cfg.lag_weights is None:
        return torch.ones(cfg.S + 1, dtype=torch.float64)
    r = torch.as_tensor(cfg.lag_weights, dtype=torch.float64)
    assert r.numel() == cfg.S + 1 and (r >= 0).all(), \
        'lag_weights needs S+1 non-negative entries'
    return r


def loss(state, data, pairs_per_lag, lag_weights=None, targets=None, ddof=1,
         groups=None):
    r"""
    Moment-matching loss ½ Σ_s r_s Σ_{(i,j)} (Λ(s)_ij − Λ̃(s)_ij)² over the
    supplied pairs.

    Args:
        state (`S3idState`, `LdsParams` or `tuple`):
            Model to evaluate.
        data (`MaskedTimeSeries`):
            Observations; unused when `targets` are given.
        pairs_per_lag (`list[PairSet]`):
            Pairs per lag s = 0..len-1.
        lag_weights (`torch.Tensor`, *optional*):
            r_s, all ones by default.
        targets (`list[torch.Tensor]`, *optional*):
            Precomputed empirical covariances for the pairs.
        ddof (`int`, *optional*, defaults to 1):
            Divisor offset of the empirical covariances.

    Returns:
        float
    """
    model = state.model() if isinstance(state, S3idState) else state
    if groups is None and targets is None:
        groups = CooccurrenceGroups(data.scheme)
    total = 0.0
    for s, pairs in enumerate(pairs_per_lag):
        if len(pairs) == 0:
            continue
        r = 1.0 if lag_weights is None else float(lag_weights[s])
        pred = predicted_lagged_cov(model, s, pairs)
        emp = targets[s] if targets is not None else empirical_lagged_cov(
            data, s, pairs, groups=groups, ddof=ddof)
        total += 0.5 * r * ((pred - emp)**2).sum().item()
    return total


def sample_batch(T, S, B, seed_g):
    r"""
    Draws B pairs (t, s) uniformly from {(t, s) : 0 <= s <= S, t + s < T}
    (0-based t), i.e. s with probability ∝ T − s, then t uniformly.
    """
    probs = torch.tensor([T - s for s in range(S + 1)], dtype=torch.float64)
    s = torch.multinomial(probs, B, replacement=True, generator=seed_g)
    u = torch.rand(B, generator=seed_g, dtype=torch.float64)
    t = torch.minimum((u * (T - s)).long(), T - s - 1)
    return t, s


def _group_sums(values, group_of, G, dim):
    # sums the entries of `values` along `dim` over the members of each group
    shape = list(values.shape)
    shape[dim] = G
    out = torch.zeros(shape, dtype=values.dtype)
    return out.index_add_(dim, group_of, values)


@torch.no_grad()
def grad_batch(state, data, groups, t, s, lag_weights=None, counts=None):
    r"""
    Batch-mean stochastic gradient of the moment-matching loss.

    For a sample (t, s) with a = ỹ_{t+s} and b = ỹ_t, pair (i, j) carries the
    weight w_ij = r_s / T^s_ij when i ∈ Ω_{t+s}, j ∈ Ω_t and T^s_ij > 1, and
    contributes w_ij (Λ(s)_ij − a_i b_j) times the derivative of Λ(s)_ij.
    Weights only depend on the co-occurrence groups of i and j, so every sum
    over j collapses to per-group Gram matrices K_h = C_hᵀC_h and vectors
    Σ_{j∈h} b_j C_j, and all row updates are done per group.

    Summing the per-sample gradients over every valid (t, s) gives the
    gradient of the loss over Ω^s with empirical covariances normalized by
    1/T^s_ij.

    Args:
        state (`S3idState`): Current parameters.
        data (`MaskedTimeSeries`): Observations.
        groups (`CooccurrenceGroups`): Groups of `data.scheme`.
        t (`torch.LongTensor`): 0-based times, shape [B].
        s (`torch.LongTensor`): Lags, shape [B], with t + s < T.
        lag_weights (`torch.Tensor`, *optional*): r_s, ones by default.
        counts (`torch.Tensor`, *optional*): Stacked group counts [S+1, G, G].

    Returns:
        dict: Gradients for 'C', 'R' and 'Pis' ([S+1, n, n], one per lag).
    """
    S, n = state.S, state.n
    t = torch.as_tensor(t, dtype=torch.long)
    s = torch.as_tensor(s, dtype=torch.long)
    assert bool((t >= 0).all()) and bool((t + s < data.T).all()), \
        'every (t, s) needs 0 <= t and t + s < T'
    B, G = t.numel(), groups.num_groups
    g_of = groups.group_of

    C = state.C.detach()
    R = state.R.detach()
    Pis = state.latent_lags()
    Pi = Pis[s]  # [B, n, n]
    if lag_weights is None:
        lag_weights = torch.ones(S + 1, dtype=C.dtype)
    if counts is None:
        counts = torch.stack([groups.counts(k) for k in range(S + 1)])
    inv_counts = torch.where(counts > 1, 1.0 / counts.clamp(min=1),
                             torch.zeros_like(counts))

    mean = data.per_variable_mean
    a = torch.nan_to_num(data.Y[t + s] - mean, nan=0.0)  # [B, p]
    b = torch.nan_to_num(data.Y[t] - mean, nan=0.0)
    obs_a = groups.observed_groups(t + s).to(C.dtype)  # [B, G]
    obs_b = groups.observed_groups(t).to(C.dtype)
    W = lag_weights[s][:, None, None] * obs_a[:, :, None] * \
        obs_b[:, None, :] * inv_counts[s]  # [B, G, G]
    delta = (s == 0).to(C.dtype)
    W_diag = torch.diagonal(W, dim1=1, dim2=2)  # [B, G]
    dW = (delta[:, None] * W_diag).sum(dim=0)  # [G]

    K = _group_sums(C[:, :, None] * C[:, None, :], g_of, G, 0)  # [G, n, n]
    KR = _group_sums(R[:, None, None] * C[:, :, None] * C[:, None, :], g_of,
                     G, 0)
    Za = _group_sums(a[:, :, None] * C[None], g_of, G, 1)  # [B, G, n]
    Zb = _group_sums(b[:, :, None] * C[None], g_of, G, 1)

    Kbar = torch.einsum('bgh,hij->bgij', W, K)
    zbar = torch.einsum('bgh,bhi->bgi', W, Zb)
    Kt = torch.einsum('bgh,gij->bhij', W, K)
    zt = torch.einsum('bgh,bgi->bhi', W, Za)

    # rows i play the role of the lead variable (observed at t+s)
    P1 = torch.einsum('bij,bgjk,blk->gil', Pi, Kbar, Pi)
    V1 = torch.einsum('bgj,bkj->bgk', zbar, Pi)
    # and of the lagged variable (observed at t)
    P2 = torch.einsum('bji,bhjk,bkl->hil', Pi, Kt, Pi)
    V2 = torch.einsum('bhj,bjk->bhk', zt, Pi)

    Pi0 = Pis[0]
    gC = torch.einsum('pi,pij->pj', C, P1[g_of] + P2[g_of])
    gC -= torch.einsum('bp,bpk->pk', a, V1[:, g_of])
    gC -= torch.einsum('bp,bpk->pk', b, V2[:, g_of])
    gC += (dW[g_of] * R)[:, None] * (C @ (Pi0 + Pi0.T))

    gPi_b = torch.einsum('gij,bjk,bgkl->bil', K, Pi, Kbar)
    gPi_b -= torch.einsum('bgi,bgj->bij', Za, zbar)
    gPi_b += delta[:, None, None] * torch.einsum('bg,gij->bij', W_diag, KR)
    gPis = torch.zeros(S + 1, n, n, dtype=C.dtype).index_add_(0, s, gPi_b)

    model_var = ((C @ Pi0) * C).sum(dim=1) + R
    gR = dW[g_of] * model_var - (delta[:, None] * W_diag[:, g_of] *
                                 a**2).sum(dim=0)

    return {'C': gC / B, 'R': gR / B, 'Pis': gPis / B}


def grad_linear_mode(A, Pi0, pi_grads):
    r"""
    Chain rule through Π_s = A^s Π₀.

    Args:
        A (`torch.Tensor`): Dynamics, [n, n].
        Pi0 (`torch.Tensor`): Stationary covariance, [n, n].
        pi_grads (`list[torch.Tensor]` or `torch.Tensor`):
            G_s = ∂L/∂Π_s for s = 0..S.

    Returns:
        tuple[torch.Tensor, torch.Tensor]: ∂L/∂A and the symmetrized ∂L/∂Π₀.
    """
    A, Pi0 = A.detach(), Pi0.detach()
    S = len(pi_grads) - 1
    powers = [torch.eye(A.shape[0], dtype=A.dtype)]
    for _ in range(S):
        powers.append(A @ powers[-1])
    dA = torch.zeros_like(A)
    dPi0 = torch.zeros_like(Pi0)
    for s in range(S + 1):
        G = pi_grads[s]
        dPi0 += powers[s].T @ G
        for k in range(s):
            dA += powers[k].T @ G @ (powers[s - 1 - k] @ Pi0).T
    return dA, symmetrize(dPi0)


def _to_param_grads(state, grads):
    if state.mode == 'linear':
        dA, dPi0 = grad_linear_mode(state.A, state.Pi0, grads['Pis'])
        return {'C': grads['C'], 'R': grads['R'], 'A': dA, 'Pi0': dPi0}
    gPis = grads['Pis'].clone()
    gPis[0] = symmetrize(gPis[0])
    return {'C': grads['C'], 'R': grads['R'], 'Pis': gPis}


def adam_step(state, grads):
    r"""
    One ADAM update of `state` with the given parameter gradients, followed
    by clamping R at 0 and symmetrizing Π₀.
    """
    params = state.parameters()
    for name, g in grads.items():
        if not bool(torch.isfinite(g).all()):
            raise NonFiniteGradientError(
                f'non-finite gradient for {name} at step {state.step}',
                step=state.step, parameter=name)
        params[name].grad = g.detach().clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    with torch.no_grad():
        state.R.clamp_(min=0.0)
        if state.mode == 'linear':
            state.Pi0.copy_(symmetrize(state.Pi0))
        else:
            state.Pis[0].copy_(symmetrize(state.Pis[0]))
    state.step += 1
    return state


def _orthonormal_gauge(C, max_cond=1e12):
    # M with (CM)ᵀ(CM) = I, or None when CᵀC is too ill-conditioned
    w, U = torch.linalg.eigh(symmetrize(C.T @ C))
    if w[0] <= 0 or w[-1] / w[0] > max_cond:
        return None, None
    M = U @ torch.diag(w.rsqrt()) @ U.T
    Minv = U @ torch.diag(w.sqrt()) @ U.T
    return M, Minv


def _export(state):
    with torch.no_grad():
        C, R = state.C.detach().clone(), state.R.detach().clamp(min=0).clone()
        M, Minv = _orthonormal_gauge(C)
        if M is None:
            warn('CᵀC is ill-conditioned, exporting in the fitted gauge')
            M = Minv = torch.eye(C.shape[1], dtype=C.dtype)
        C = C @ M
        if state.mode == 'linear':
            A = Minv @ state.A.detach() @ M
            Pi0 = project_psd(Minv @ state.Pi0.detach() @ Minv.T)
            rho = spectral_radius(A)
            if rho >= 1.0:
                warn(f'estimated A is unstable (spectral radius {rho:.4f})')
            Q = project_psd(Pi0 - A @ Pi0 @ A.T)
            return LdsParams(A=A, C=C, Q=Q, R=R, Pi0=Pi0)
        lags = list(Minv @ state.Pis.detach() @ Minv.T)
        lags[0] = project_psd(lags[0])
        return (C, LatentMoments(lags=lags), R)


class StitchS3ID:

    def __init__(self, config):
        r"""
        Initializes the stitching subspace identification fitter.

        Args:
            config (`EasyDict`):
                Object containing S3ID parameters initialized from
                `stitch.configs.s3id_cfg`.
        """
        self.config = config
        self.lag_weights = _lag_weights(config)

    def _monitor_set(self, data, groups, seed_g):
        pairs, targets = [], []
        for s in range(self.config.S + 1):
            ps = sample_pairs(groups, s, self.config.monitor_pairs, seed_g)
            pairs.append(ps)
            targets.append(
                empirical_lagged_cov(data, s, ps, groups=groups) if len(ps)
                else torch.zeros(0, dtype=torch.float64))
        return pairs, targets

    def fit(self, data, state=None, progress=True):
        r"""
        Runs `passes` × ceil(T·(S+1)/B) ADAM steps on uniformly sampled
        (t, s) batches. With `adam.schedule == 'cosine'` the step size decays
        along a half cosine to zero over the run. The fitted parameters are
        exported in the basis where CᵀC = I.

        Args:
            data (`MaskedTimeSeries`):
                Observations with their scheme.
            state (`S3idState`, *optional*):
                Warm start, otherwise `moment_init_state` or `init_state`
                as selected by `config.init`.
            progress (`bool`, *optional*, defaults to True):
                Show a progress bar.

        Returns:
            tuple: Fitted `LdsParams` (linear mode) or `(C, LatentMoments, R)`
            (nonlinear mode), and the monitoring trace as a list of dicts
            with keys step, monitor_loss and wall_time_s.
        """
        cfg = self.config
        T, S, B = data.T, int(cfg.S), int(cfg.batch_size)
        assert S < T, f'max lag S={S} must be smaller than T={T}'
        groups = CooccurrenceGroups(data.scheme)
        counts = torch.stack([groups.counts(k) for k in range(S + 1)])
        if state is None:
            if cfg.init == 'moments':
                state = moment_init_state(data, cfg, groups)
            else:
                state = init_state(data, cfg)

        batch_g = make_generator(substream_seed(cfg.seed, 'batch'))
        monitor_g = make_generator(substream_seed(cfg.seed, 'monitor'))

        pairs, targets = self._monitor_set(data, groups, monitor_g)
        steps = int(cfg.passes) * math.ceil(T * (S + 1) / B)
        logging.info(f"S3ID ({cfg.mode}): p={data.p}, n={cfg.n}, S={S}, "
                     f"{groups.num_groups} co-occurrence groups, "
                     f"{steps} steps.")
        scheduler = None
        if cfg.adam.schedule == 'cosine':
            scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
                state.optimizer, T_max=max(steps, 1))

        trace = []
        start = time.perf_counter()

        def record():
            value = loss(state, data, pairs, self.lag_weights, targets=targets)
            if not math.isfinite(value):
                raise NonFiniteGradientError(
                    f'monitoring loss became non-finite at step {state.step}',
                    step=state.step)
            trace.append({'step': state.step, 'monitor_loss': value,
                          'wall_time_s': time.perf_counter() - start})

        record()
        for _ in tqdm(range(steps), disable=not progress):
            t, s = sample_batch(T, S, B, batch_g)
            grads = grad_batch(state, data, groups, t, s, self.lag_weights,
                               counts=counts)
            adam_step(state, _to_param_grads(state, grads))
            if scheduler is not None:
                scheduler.step()
            if state.step % cfg.monitor_every == 0:
                record()
        if trace[-1]['step'] != state.step:
            record()

        logging.info(f"S3ID finished: monitoring loss "
                     f"{trace[0]['monitor_loss']:.6g} -> "
                     f"{trace[-1]['monitor_loss']:.6g}.")
        return _export(state), trace

    def fit_moments(self, lagged_covs, steps, state=None, progress=False):
        r"""
        Full-batch S3ID on dense lagged covariances of a fully observed
        system, minimizing ½ Σ_s r_s ‖Λ(s) − Λ̃(s)‖²_F.

        Args:
            lagged_covs (`list[torch.Tensor]`):
                Λ̃(s) for s = 0..S, each [p, p].
            steps (`int`):
                Number of ADAM steps.
            state (`S3idState`, *optional*):
                Warm start; otherwise C ~ N(0, 1/n), R at half of diag Λ̃(0).

        Returns:
            tuple: Fitted parameters and the loss after every step.
        """
        cfg = self.config
        S = int(cfg.S)
        assert len(lagged_covs) >= S + 1, f'need Λ̃(s) for s = 0..{S}'
        emp = torch.stack([torch.as_tensor(c, dtype=torch.float64)
                           for c in lagged_covs[:S + 1]])
        p, n = emp.shape[1], int(cfg.n)
        if state is None:
            seed_g = make_generator(substream_seed(cfg.seed, 'init'))
            eye = torch.eye(n, dtype=torch.float64)
            state = S3idState(
                C=nn.Parameter(
                    torch.randn(p, n, generator=seed_g, dtype=torch.float64) /
                    math.sqrt(n)),
                R=nn.Parameter(0.5 * torch.diagonal(emp[0]).clone()),
                mode=cfg.mode, S=S)
            if cfg.mode == 'linear':
                state.A = nn.Parameter(0.9 * eye)
                state.Pi0 = nn.Parameter(eye.clone())
            else:
                state.Pis = nn.Parameter(
                    torch.stack([0.9**s * eye for s in range(S + 1)]))
            state.optimizer = _make_optimizer(state.parameters(), cfg.adam)

        r = self.lag_weights
        trace = []
        for _ in tqdm(range(steps), disable=not progress):
            with torch.no_grad():
                C, R = state.C.detach(), state.R.detach()
                Pis = state.latent_lags()
                pred = torch.einsum('pi,sij,qj->spq', C, Pis, C)
                pred[0] += torch.diag(R)
                E = r[:, None, None] * (pred - emp)
                sq = ((pred - emp)**2).sum(dim=(1, 2))
                trace.append(0.5 * (r * sq).sum().item())
                gC = torch.einsum('spq,qj,sij->pi', E, C, Pis) + \
                    torch.einsum('sqp,qj,sji->pi', E, C, Pis)
                gPis = torch.einsum('pi,spq,qj->sij', C, E, C)
                grads = {'C': gC, 'R': torch.diagonal(E[0]).clone(),
                         'Pis': gPis}
            adam_step(state, _to_param_grads(state, grads))
        return _export(state), trace


def fit_s3id(data, cfg, progress=True):
    """Functional wrapper around `StitchS3ID(cfg).fit(data)`."""
    return StitchS3ID(cfg).fit(data, progress=progress)
