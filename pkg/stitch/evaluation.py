# Copyright 2026 The Stitch Authors. All rights reserved.
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import torch

from .modules.lds import LdsParams, predicted_lagged_cov
from .modules.observation import (
    CooccurrenceGroups,
    MaskedTimeSeries,
    empirical_lagged_cov,
    sample_pairs,
)
from .utils.errors import (
    LagOutOfRangeError,
    RankDeficientError,
    UndefinedMetricError,
)
from .utils.utils import make_generator, substream_seed

__all__ = [
    'EvalReport', 'AlignmentReport', 'subspace_projection_error',
    'largest_principal_angle', 'prediction_correlation', 'spectrum_report',
    'observability_matrix', 'observability_alignment', 'evaluate'
]


@dataclass
class EvalReport:
    """Metrics of one fitted model; metrics that could not be computed are
    None."""
    projection_error: float = None
    largest_principal_angle: float = None
    prediction_correlation: dict = field(default_factory=dict)
    num_pairs: dict = field(default_factory=dict)
    spectra: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_json(self):
        doc = asdict(self)
        doc['prediction_correlation'] = {
            str(s): v for s, v in self.prediction_correlation.items()
        }
        doc['num_pairs'] = {str(s): v for s, v in self.num_pairs.items()}
        return doc


@dataclass
class AlignmentReport:
    """Outcome of `observability_alignment`; M is None when either
    observability matrix is rank deficient."""
    M: torch.Tensor
    rank: tuple
    n: int
    eigenvalue_distance: float


def _orthonormal_basis(U, what):
    if U.dim() != 2 or U.shape[1] == 0 or U.shape[0] == 0:
        raise ValueError(f'{what} must be a non-empty matrix')
    Qm, Rm = torch.linalg.qr(U)
    diag = torch.diagonal(Rm).abs()
    if diag.min() <= 1e-12 * max(diag.max().item(), 1e-300):
        raise RankDeficientError(f'{what} does not have full column rank')
    return Qm


def subspace_projection_error(C_true, C_hat):
    r"""
    e(C, Ĉ) = ‖(I − Q Qᵀ) C‖_F / ‖C‖_F with Q an orthonormal basis of the
    columns of Ĉ.
    """
    Qh = _orthonormal_basis(C_hat, 'estimated loading matrix')
    resid = C_true - Qh @ (Qh.T @ C_true)
    return (torch.linalg.norm(resid) / torch.linalg.norm(C_true)).item()


def largest_principal_angle(U, V):
    """Largest principal angle between the column spaces of U and V, in
    degrees."""
    Qu = _orthonormal_basis(U, 'first subspace')
    Qv = _orthonormal_basis(V, 'second subspace')
    if Qu.shape[1] > Qv.shape[1]:
        Qu, Qv = Qv, Qu
    cos = torch.linalg.svdvals(Qu.T @ Qv).min().clamp(max=1.0)
    # sine from the residual keeps small angles accurate
    sin = torch.linalg.matrix_norm(Qu - Qv @ (Qv.T @ Qu), ord=2).clamp(max=1.0)
    return math.degrees(math.atan2(sin.item(), cos.item()))


def _model_p(model):
    return model.p if isinstance(model, LdsParams) else model[0].shape[0]


def prediction_correlation(model,
                           truth,
                           scheme,
                           s,
                           pair_sample=1000000,
                           seed=0,
                           groups=None,
                           return_count=False):
    r"""
    Pearson correlation between predicted and true Λ(s)_ij over pairs never
    observed together under `scheme` (T^s_ij = 0).

    Args:
        model (`LdsParams` or `tuple`):
            Fitted parameters, or `(C, LatentMoments, R)`.
        truth (`LdsParams`, `tuple` or `MaskedTimeSeries`):
            Generating parameters, or held-out data whose empirical
            covariances serve as ground truth.
        scheme (`ObservationScheme`):
            Scheme of the training data.
        s (`int`):
            Lag.
        pair_sample (`int`, *optional*, defaults to 1000000):
            Maximal number of sampled pairs.
        seed (`int`, *optional*, defaults to 0):
            Seed of the pair sampler.

    Returns:
        float, or (float, int) with `return_count`.
    """
    if groups is None:
        groups = CooccurrenceGroups(scheme)
    pairs = sample_pairs(groups, s, pair_sample, make_generator(seed),
                         observed=False)
    if len(pairs) < 2:
        raise UndefinedMetricError(
            f'no never co-observed pairs at lag {s} to evaluate')
    pred = predicted_lagged_cov(model, s, pairs)
    if isinstance(truth, MaskedTimeSeries):
        target = empirical_lagged_cov(truth, s, pairs)
    else:
        target = predicted_lagged_cov(truth, s, pairs)
    if pred.std() == 0 or target.std() == 0:
        raise UndefinedMetricError(
            f'correlation at lag {s} is undefined for constant covariances')
    corr = torch.corrcoef(torch.stack([pred, target]))[0, 1].item()
    return (corr, len(pairs)) if return_count else corr


def _ratios(values):
    mags = [abs(v) for v in values]
    ratios = [
        mags[k + 1] / mags[k] if mags[k] > 0 else float('nan')
        for k in range(len(mags) - 1)
    ]
    finite = [(r, k) for k, r in enumerate(ratios) if math.isfinite(r)]
    elbow = min(finite)[1] + 1 if finite else None
    return ratios, elbow


def spectrum_report(model):
    r"""
    Descending eigenvalues of Π̂₀ and eigenvalue moduli of Â with consecutive
    ratios λ_{k+1}/λ_k. The elbow is the number of eigenvalues before the
    sharpest drop.
    """
    if isinstance(model, LdsParams):
        Pi0, A = model.Pi0, model.A
    else:
        Pi0, A = model[1].lags[0], None
    pi_eigs = torch.linalg.eigvalsh(0.5 * (Pi0 + Pi0.T)).flip(0).tolist()
    pi_ratios, pi_elbow = _ratios(pi_eigs)
    report = {'Pi0': pi_eigs, 'Pi0_ratios': pi_ratios, 'Pi0_elbow': pi_elbow}
    if A is not None:
        a_eigs = torch.linalg.eigvals(A).abs().sort(
            descending=True).values.tolist()
        a_ratios, a_elbow = _ratios(a_eigs)
        report.update(A=a_eigs, A_ratios=a_ratios, A_elbow=a_elbow)
    return report


def observability_matrix(C_J, A):
    """Stack of C_J A^k for k = 0..n-1."""
    blocks, block = [], C_J
    for _ in range(A.shape[0]):
        blocks.append(block)
        block = block @ A
    return torch.cat(blocks, dim=0)


def _eigenvalue_distance(A1, A2):
    e1 = torch.linalg.eigvals(A1).tolist()
    e2 = torch.linalg.eigvals(A2).tolist()
    if len(e1) <= 7:
        return min(
            max(abs(a - b) for a, b in zip(e1, perm))
            for perm in itertools.permutations(e2))
    # greedy nearest matching for larger n
    left, worst = list(e2), 0.0
    for a in e1:
        k = min(range(len(left)), key=lambda j: abs(a - left[j]))
        worst = max(worst, abs(a - left.pop(k)))
    return worst


def observability_alignment(params1, params2, J):
    r"""
    Latent base change between two models from their observability matrices
    on the shared variables J.

    Args:
        params1 (`LdsParams`): First model.
        params2 (`LdsParams`): Second model.
        J (`torch.LongTensor` or `tuple`):
            Rows of the shared variables, either one index vector valid for
            both models or a pair (rows in params1, rows in params2).

    Returns:
        AlignmentReport: M solves O¹_J M = O²_J in least squares when both
        observability matrices have rank n.
    """
    n = params1.n
    assert params2.n == n, 'both models need the same latent dimension'
    J1, J2 = J if isinstance(J, tuple) else (J, J)
    J1 = torch.as_tensor(J1, dtype=torch.long)
    J2 = torch.as_tensor(J2, dtype=torch.long)
    assert J1.numel() == J2.numel(), 'overlap sets differ in size'
    dist = _eigenvalue_distance(params1.A, params2.A)
    if J1.numel() == 0:
        return AlignmentReport(M=None, rank=(0, 0), n=n,
                               eigenvalue_distance=dist)
    O1 = observability_matrix(params1.C[J1], params1.A)
    O2 = observability_matrix(params2.C[J2], params2.A)
    rank = (int(torch.linalg.matrix_rank(O1)),
            int(torch.linalg.matrix_rank(O2)))
    M = None
    if min(rank) == n:
        M = torch.linalg.lstsq(O1, O2).solution
    else:
        logging.info(f"Observability matrices on {J1.numel()} shared "
                     f"variables have ranks {rank}, need {n}.")
    return AlignmentReport(M=M, rank=rank, n=n, eigenvalue_distance=dist)


def evaluate(model, truth, scheme, cfg, method=None):
    r"""
    Computes every applicable metric of a fitted model.

    Args:
        model (`LdsParams` or `tuple`):
            Fitted parameters.
        truth (`LdsParams` or `MaskedTimeSeries`):
            Generating parameters (simulations) or held-out fully observed
            data. Subspace metrics need parameters.
        scheme (`ObservationScheme`):
            Scheme of the data the model was fitted on.
        cfg (`EasyDict`):
            Evaluation config, see `stitch.configs.eval_cfg`.
        method (`str`, *optional*):
            Recorded in the report metadata.

    Returns:
        EvalReport
    """
    p = _model_p(model)
    truth_p = truth.p
    if p != scheme.p or truth_p != scheme.p:
        raise ValueError(
            f'dimension mismatch: model p={p}, truth p={truth_p}, '
            f'scheme p={scheme.p}')

    report = EvalReport(metadata={'method': method, 'p': p,
                                  'n': (model.n if isinstance(model, LdsParams)
                                        else model[0].shape[1])})
    if isinstance(truth, LdsParams):
        C_hat = model.C if isinstance(model, LdsParams) else model[0]
        report.projection_error = subspace_projection_error(truth.C, C_hat)
        report.largest_principal_angle = largest_principal_angle(
            truth.C, C_hat)

    groups = CooccurrenceGroups(scheme)
    for s in cfg.lags:
        try:
            corr, count = prediction_correlation(
                model,
                truth,
                scheme,
                s,
                cfg.pair_sample,
                seed=substream_seed(cfg.seed, f'eval/{s}'),
                groups=groups,
                return_count=True)
        except (UndefinedMetricError, LagOutOfRangeError) as e:
            logging.warning(f"Correlation at lag {s} undefined: {e}")
            corr, count = None, 0
        report.prediction_correlation[s] = corr
        report.num_pairs[s] = count
    report.spectra = spectrum_report(model)
    return report
