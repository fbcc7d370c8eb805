# Copyright 2026 The Stitch Authors. All rights reserved.
import bisect
import math
from dataclasses import dataclass

import torch

from ..utils.errors import DatasetError, InsufficientCoObservationError

__all__ = [
    'Segment', 'ObservationScheme', 'CooccurrenceGroups', 'MaskedTimeSeries',
    'PairSet', 'make_two_subset_scheme', 'make_multi_subset_scheme',
    'full_scheme', 'compute_cooccurrence_groups', 'empirical_lagged_cov',
    'cooccurring_pairs', 'sample_pairs', 'scheme_to_json', 'scheme_from_json'
]


@dataclass(frozen=True)
class Segment:
    """
    Time points [t_start, t_end) observing the variables in `ranges`.

    All indices are 0-based and half-open; `ranges` is a sorted tuple of
    disjoint (lo, hi) intervals over variables.
    """
    t_start: int
    t_end: int
    ranges: tuple

    @property
    def length(self):
        return self.t_end - self.t_start

    def indices(self):
        if not self.ranges:
            return torch.zeros(0, dtype=torch.long)
        return torch.cat([torch.arange(lo, hi) for lo, hi in self.ranges])


class ObservationScheme:
    r"""
    Serial subset observation scheme: the time axis is tiled by segments,
    each observing a fixed set of variables.

    Args:
        p (`int`): Number of variables.
        T (`int`): Number of time points.
        segments (`list[Segment]`): Segments tiling [0, T) in order.
    """

    def __init__(self, p, T, segments):
        self.p = int(p)
        self.T = int(T)
        self.segments = tuple(
            Segment(int(seg.t_start), int(seg.t_end),
                    tuple((int(lo), int(hi)) for lo, hi in seg.ranges))
            for seg in segments)
        self._check()
        self.starts = [seg.t_start for seg in self.segments]

    def _check(self):
        if self.p < 1 or self.T < 1:
            raise ValueError(f'need p >= 1 and T >= 1, got p={self.p}, '
                             f'T={self.T}')
        if not self.segments:
            raise ValueError('a scheme needs at least one segment')
        t = 0
        for k, seg in enumerate(self.segments):
            if seg.t_start != t or seg.t_end <= seg.t_start:
                raise ValueError(
                    f'segment {k} spans [{seg.t_start}, {seg.t_end}) but '
                    f'must start at {t} and be non-empty')
            t = seg.t_end
            last = 0
            for lo, hi in seg.ranges:
                if lo < last or hi <= lo or hi > self.p:
                    raise ValueError(
                        f'segment {k} has invalid variable range [{lo}, {hi})')
                last = hi
        if t != self.T:
            raise ValueError(
                f'segments end at t={t} but the scheme has T={self.T}')

    def __len__(self):
        return len(self.segments)

    def __eq__(self, other):
        return isinstance(other, ObservationScheme) and \
            (self.p, self.T, self.segments) == (other.p, other.T,
                                                other.segments)

    def __repr__(self):
        return (f'ObservationScheme(p={self.p}, T={self.T}, '
                f'segments={len(self.segments)})')

    def segment_of(self, t):
        return bisect.bisect_right(self.starts, int(t)) - 1

    def segment_ids(self, t):
        """Vectorized `segment_of` for a LongTensor of time points."""
        starts = torch.tensor(self.starts, dtype=torch.long)
        return torch.searchsorted(starts, t, right=True) - 1

    def observed_at(self, t):
        return self.segments[self.segment_of(t)].indices()

    def membership(self):
        """Boolean [num_segments, p] matrix of observed variables."""
        memb = torch.zeros(len(self.segments), self.p, dtype=torch.bool)
        for k, seg in enumerate(self.segments):
            for lo, hi in seg.ranges:
                memb[k, lo:hi] = True
        return memb

    def mask(self):
        """Dense boolean [T, p] observation mask."""
        lengths = torch.tensor([seg.length for seg in self.segments])
        return self.membership().repeat_interleave(lengths, dim=0)


def full_scheme(p, T):
    return ObservationScheme(p, T, [Segment(0, T, ((0, p),))])


def make_two_subset_scheme(p, overlap_fraction, T1, T2):
    r"""
    Two sessions observing I₁ = [1, p₁] and I₂ = [p₂, p] (1-based) with
    |I₁ ∩ I₂| = round(overlap_fraction · p).

    Args:
        p (`int`): Number of variables.
        overlap_fraction (`float`): Overlap as a fraction of p, in [0, 1].
        T1 (`int`): Length of the first session.
        T2 (`int`): Length of the second session.

    Returns:
        ObservationScheme
    """
    if not 0.0 <= overlap_fraction <= 1.0:
        raise ValueError(
            f'overlap_fraction must lie in [0, 1], got {overlap_fraction}')
    if T1 < 1 or T2 < 1:
        raise ValueError(f'session lengths must be positive, got {T1}, {T2}')
    o = int(math.floor(overlap_fraction * p + 0.5))
    p1 = math.ceil((p + o) / 2)
    p2 = p1 - o + 1
    if p1 < 1 or p2 > p or o > min(p1, p - p2 + 1):
        raise ValueError(
            f'overlap of {o} variables does not fit two subsets of p={p}')
    return ObservationScheme(p, T1 + T2, [
        Segment(0, T1, ((0, p1),)),
        Segment(T1, T1 + T2, ((p2 - 1, p),)),
    ])


def make_multi_subset_scheme(p, k_subsets, overlap, T_each):
    r"""
    Chain of `k_subsets` windows of equal width w = ceil((p + (k-1)·o) / k),
    consecutive windows sharing `overlap` variables; the last window is
    clipped at p. Session m observes window m for `T_each` time points.
    """
    k, o = int(k_subsets), int(overlap)
    if k < 2:
        raise ValueError(f'need at least 2 subsets, got {k}')
    w = math.ceil((p + (k - 1) * o) / k)
    if o >= w:
        raise ValueError(f'overlap {o} must be smaller than the window '
                         f'width {w}')
    starts = [m * (w - o) for m in range(k)]
    if starts[-1] >= p:
        raise ValueError(
            f'{k} windows of width {w} with overlap {o} do not fit p={p}')
    if starts[-1] + w < p:
        raise ValueError(f'windows fail to cover all {p} variables')
    segments = [
        Segment(m * T_each, (m + 1) * T_each, ((s, min(s + w, p)),))
        for m, s in enumerate(starts)
    ]
    return ObservationScheme(p, k * T_each, segments)


def scheme_to_json(scheme):
    """JSON form with 1-based inclusive times and 1-based half-open ranges."""
    return {
        'p': scheme.p,
        'T': scheme.T,
        'segments': [{
            't_start': seg.t_start + 1,
            't_end': seg.t_end,
            'ranges': [[lo + 1, hi + 1] for lo, hi in seg.ranges],
        } for seg in scheme.segments],
    }


def scheme_from_json(doc):
    try:
        segments = [
            Segment(
                int(seg['t_start']) - 1, int(seg['t_end']),
                tuple((int(lo) - 1, int(hi) - 1) for lo, hi in seg['ranges']))
            for seg in doc['segments']
        ]
        return ObservationScheme(int(doc['p']), int(doc['T']), segments)
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f'invalid observation scheme: {e}') from e


class CooccurrenceGroups:
    r"""
    Partition of the variables into groups with identical observation
    patterns, and group-level co-occurrence counts
    T^s[a, b] = |{t : group a observed at t+s, group b observed at t}|.

    Groups are numbered by their smallest member.
    """

    def __init__(self, scheme):
        self.scheme = scheme
        memb = scheme.membership()
        _, inverse = torch.unique(
            memb.T.to(torch.uint8), dim=0, return_inverse=True)
        num = int(inverse.max().item()) + 1
        first = torch.full((num,), scheme.p, dtype=torch.long)
        first.scatter_reduce_(0, inverse, torch.arange(scheme.p), reduce='amin')
        relabel = torch.empty(num, dtype=torch.long)
        relabel[torch.argsort(first)] = torch.arange(num)

        self.group_of = relabel[inverse]
        self.sizes = torch.bincount(self.group_of, minlength=num)
        self.order = torch.argsort(self.group_of, stable=True)
        self.offsets = torch.cat(
            [torch.zeros(1, dtype=torch.long),
             torch.cumsum(self.sizes, 0)])
        self.members = [
            self.order[self.offsets[g]:self.offsets[g + 1]] for g in range(num)
        ]
        # [G, U] group-by-segment observation indicator
        first_member = self.order[self.offsets[:-1]]
        self.seg_membership = memb[:, first_member].T.to(torch.float64)
        self._seg_bounds = torch.tensor(
            [[seg.t_start, seg.t_end] for seg in scheme.segments],
            dtype=torch.long)
        self._counts = {}

    @property
    def num_groups(self):
        return len(self.members)

    def _overlap_lengths(self, s):
        # K[u, v] = |{t in segment v : t + s in segment u}|
        b = self._seg_bounds
        lo = torch.maximum(b[None, :, 0], b[:, None, 0] - s)
        hi = torch.minimum(b[None, :, 1], b[:, None, 1] - s)
        return (hi - lo).clamp(min=0).to(torch.float64)

    def counts(self, s):
        """[G, G] table, rows index the group observed at t+s."""
        if s < 0:
            raise ValueError(f'lag must be non-negative, got {s}')
        if s not in self._counts:
            M = self.seg_membership
            self._counts[s] = M @ self._overlap_lengths(s) @ M.T
        return self._counts[s]

    def pair_counts(self, s, rows, cols):
        rows = torch.as_tensor(rows, dtype=torch.long)
        cols = torch.as_tensor(cols, dtype=torch.long)
        return self.counts(s)[self.group_of[rows], self.group_of[cols]]

    def observed_groups(self, t):
        """Boolean [len(t), G] indicator of groups observed at times t."""
        seg = self.scheme.segment_ids(torch.as_tensor(t, dtype=torch.long))
        return self.seg_membership[:, seg].T > 0


def compute_cooccurrence_groups(scheme):
    return CooccurrenceGroups(scheme)


@dataclass
class PairSet:
    """0-based variable pairs (rows[k], cols[k]) at a common lag."""
    lag: int
    rows: torch.Tensor
    cols: torch.Tensor

    def __len__(self):
        return self.rows.numel()


class MaskedTimeSeries:
    r"""
    Observations Y [T, p] with the scheme that produced them. Entries outside
    Ω_t are stored as NaN and never read.

    Args:
        Y (`torch.Tensor`): Data matrix, shape [T, p].
        scheme (`ObservationScheme`): Observation pattern.
        validate (`bool`, *optional*, defaults to True):
            Check that the NaN pattern matches the scheme.
    """

    def __init__(self, Y, scheme, validate=True):
        Y = torch.as_tensor(Y, dtype=torch.float64)
        if Y.shape != (scheme.T, scheme.p):
            raise DatasetError(
                f'data shape {tuple(Y.shape)} does not match the scheme '
                f'(T={scheme.T}, p={scheme.p})')
        self.Y = Y
        self.scheme = scheme
        if validate:
            self.validate()

        total = torch.zeros(scheme.p, dtype=torch.float64)
        count = torch.zeros(scheme.p, dtype=torch.float64)
        for seg, idx, block in self.blocks():
            total[idx] += block.sum(dim=0)
            count[idx] += seg.length
        self.observed_count = count
        self.per_variable_mean = torch.where(count > 0, total / count.clamp(
            min=1), torch.zeros_like(total))

    @classmethod
    def from_full(cls, Y, scheme):
        """Masks a fully sampled matrix with `scheme`."""
        Y = torch.as_tensor(Y, dtype=torch.float64).clone()
        Y[~scheme.mask()] = float('nan')
        return cls(Y, scheme, validate=False)

    @property
    def T(self):
        return self.scheme.T

    @property
    def p(self):
        return self.scheme.p

    def blocks(self):
        """Yields (segment, observed indices, observed block) per segment."""
        for seg in self.scheme.segments:
            idx = seg.indices()
            yield seg, idx, self.Y[seg.t_start:seg.t_end, idx]

    def validate(self):
        for k, (seg, idx, block) in enumerate(self.blocks()):
            if not torch.isfinite(block).all():
                raise DatasetError(
                    f'segment {k} has non-finite values at observed entries')
            rows = self.Y[seg.t_start:seg.t_end]
            if int(torch.isnan(rows).sum()) != rows.numel() - block.numel():
                raise DatasetError(
                    f'segment {k} has values outside its observed variables')

    def centered(self):
        """Observed-mean centered data with unobserved entries set to 0."""
        Yc = self.Y - self.per_variable_mean
        return torch.nan_to_num(Yc, nan=0.0)

    def observed_variance(self, ddof=1):
        sq = torch.zeros(self.p, dtype=torch.float64)
        for _, idx, block in self.blocks():
            sq[idx] += ((block - self.per_variable_mean[idx])**2).sum(dim=0)
        denom = (self.observed_count - ddof).clamp(min=1)
        return sq / denom


def empirical_lagged_cov(data,
                         s,
                         pairs=None,
                         groups=None,
                         ddof=1,
                         chunk_elems=2**24):
    r"""
    Empirical lagged covariance over co-observed time points,
    Λ̃(s)_ij = Σ_t ỹ^i_{t+s} ỹ^j_t / (T^s_ij − ddof), with ỹ centered by the
    observed-time mean.

    Args:
        data (`MaskedTimeSeries`): Observations.
        s (`int`): Lag.
        pairs (`PairSet` or `tuple`, *optional*):
            Pairs to evaluate. Without pairs the dense [p, p] matrix is
            returned, with NaN wherever T^s_ij <= ddof.
        groups (`CooccurrenceGroups`, *optional*):
            Precomputed groups of `data.scheme`.
        ddof (`int`, *optional*, defaults to 1):
            Divisor offset; 1 is the unbiased estimator, 0 the plain average.
        chunk_elems (`int`, *optional*):
            Bound on temporary elements when evaluating pair subsets.

    Returns:
        torch.Tensor: Estimates for `pairs`, or the dense matrix.
    """
    if groups is None:
        groups = CooccurrenceGroups(data.scheme)
    T = data.T
    if not 0 <= s < T:
        raise ValueError(f'lag {s} is out of range for T={T}')
    Yc = data.centered()
    lead, lag = Yc[s:], Yc[:T - s]

    if pairs is None:
        G = groups.counts(s)[groups.group_of][:, groups.group_of]
        num = lead.T @ lag
        return torch.where(G > ddof, num / (G - ddof).clamp(min=1),
                           torch.full_like(num, float('nan')))

    rows, cols = (pairs.rows, pairs.cols) if hasattr(pairs, 'rows') else pairs
    rows = torch.as_tensor(rows, dtype=torch.long)
    cols = torch.as_tensor(cols, dtype=torch.long)
    counts = groups.pair_counts(s, rows, cols)
    if (counts <= 1).any():
        k = int(torch.nonzero(counts <= 1)[0])
        raise InsufficientCoObservationError(
            f'pair ({int(rows[k])}, {int(cols[k])}) is co-observed '
            f'{int(counts[k])} time(s) at lag {s}, need at least 2')

    num = torch.zeros(rows.numel(), dtype=torch.float64)
    step = max(1, chunk_elems // max(1, rows.numel()))
    for t0 in range(0, T - s, step):
        num += (lead[t0:t0 + step, rows] * lag[t0:t0 + step, cols]).sum(dim=0)
    return num / (counts - ddof)


def _enumerate(groups, cand):
    rows, cols = [], []
    for a, b in torch.nonzero(cand).tolist():
        ma, mb = groups.members[a], groups.members[b]
        rows.append(ma.repeat_interleave(mb.numel()))
        cols.append(mb.repeat(ma.numel()))
    if not rows:
        empty = torch.zeros(0, dtype=torch.long)
        return empty, empty.clone()
    return torch.cat(rows), torch.cat(cols)


def _candidates(groups, s, observed):
    counts = groups.counts(s)
    return counts > 1 if observed else counts == 0


def cooccurring_pairs(groups, s, observed=True):
    """
    All pairs with T^s_ij > 1 (the set Ω^s), or with T^s_ij = 0 when
    `observed` is False.
    """
    rows, cols = _enumerate(groups, _candidates(groups, s, observed))
    return PairSet(lag=s, rows=rows, cols=cols)


def _draw_pairs(groups, weights, m, seed_g):
    # m i.i.d. draws, every candidate pair equally likely
    G = groups.num_groups
    flat = torch.multinomial(weights.flatten(), m, replacement=True,
                             generator=seed_g)
    a, b = flat // G, flat % G
    u = torch.rand(2, m, generator=seed_g, dtype=torch.float64)
    pick_a = torch.minimum((u[0] * groups.sizes[a]).long(),
                           groups.sizes[a] - 1)
    pick_b = torch.minimum((u[1] * groups.sizes[b]).long(),
                           groups.sizes[b] - 1)
    rows = groups.order[groups.offsets[a] + pick_a]
    cols = groups.order[groups.offsets[b] + pick_b]
    return rows, cols


def _first_occurrences(keys):
    uniq, inverse = torch.unique(keys, return_inverse=True)
    first = torch.full((uniq.numel(),), keys.numel(), dtype=torch.long)
    first.scatter_reduce_(0, inverse, torch.arange(keys.numel()), 'amin')
    return torch.sort(first).values


def sample_pairs(groups, s, k, seed_g, observed=True):
    r"""
    Samples up to `k` distinct pairs from Ω^s (or from the never co-observed
    pairs when `observed` is False), uniformly without replacement. If there
    are at most `k` candidates they are all returned.

    Small candidate sets are enumerated and permuted. Otherwise a group pair
    is drawn with probability proportional to |F_a|·|F_b|, then one member of
    each group uniformly, and repeated pairs are dropped until `k` distinct
    pairs remain.
    """
    cand = _candidates(groups, s, observed)
    sizes = groups.sizes.to(torch.float64)
    weights = (sizes[:, None] * sizes[None, :]) * cand
    total = int(weights.sum().item())
    if total <= k:
        return cooccurring_pairs(groups, s, observed)
    if total <= 4 * k:
        rows, cols = _enumerate(groups, cand)
        keep = torch.randperm(rows.numel(), generator=seed_g)[:k]
        return PairSet(lag=s, rows=rows[keep], cols=cols[keep])

    p = groups.group_of.numel()
    rows = cols = torch.zeros(0, dtype=torch.long)
    while rows.numel() < k:
        more_rows, more_cols = _draw_pairs(groups, weights,
                                           2 * (k - rows.numel()) + 16, seed_g)
        rows = torch.cat([rows, more_rows])
        cols = torch.cat([cols, more_cols])
        keep = _first_occurrences(rows * p + cols)
        rows, cols = rows[keep], cols[keep]
    return PairSet(lag=s, rows=rows[:k], cols=cols[:k])
