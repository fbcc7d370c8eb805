import pytest

torch = pytest.importorskip("torch")

from hypothesis import given, settings
from hypothesis import strategies as st

from stitch.modules import (
    CooccurrenceGroups,
    MaskedTimeSeries,
    ObservationScheme,
    PairSet,
    Segment,
    compute_cooccurrence_groups,
    cooccurring_pairs,
    empirical_lagged_cov,
    full_scheme,
    make_multi_subset_scheme,
    make_two_subset_scheme,
    predicted_lagged_cov,
    sample_pairs,
    scheme_from_json,
    scheme_to_json,
)
from stitch.utils import DatasetError, InsufficientCoObservationError, make_generator


def _hand_scheme():
    # 1-based: Ω_t = {1,2,3} for t = 1..3, {3,4} for t = 4..6
    return ObservationScheme(4, 6, [
        Segment(0, 3, ((0, 3),)),
        Segment(3, 6, ((2, 4),)),
    ])


def _brute_counts(scheme, s):
    mask = scheme.mask().to(torch.float64)
    return mask[s:].T @ mask[:scheme.T - s]


@st.composite
def schemes(draw):
    p = draw(st.integers(1, 12))
    num_segments = draw(st.integers(1, 5))
    lengths = draw(
        st.lists(st.integers(1, 12), min_size=num_segments,
                 max_size=num_segments))
    segments, t = [], 0
    for length in lengths:
        cuts = sorted(
            draw(st.sets(st.integers(0, p), min_size=0, max_size=4)))
        ranges = tuple((lo, hi) for lo, hi in zip(cuts[::2], cuts[1::2])
                       if hi > lo)
        segments.append(Segment(t, t + length, ranges))
        t += length
    return ObservationScheme(p, t, segments)


def test_two_subset_scheme_small():
    scheme = make_two_subset_scheme(4, 0.5, 3, 3)
    assert scheme.T == 6
    assert scheme.observed_at(0).tolist() == [0, 1, 2]
    assert scheme.observed_at(2).tolist() == [0, 1, 2]
    assert scheme.observed_at(3).tolist() == [1, 2, 3]


def test_two_subset_scheme_overlap_size():
    scheme = make_two_subset_scheme(1000, 0.10, 50000, 50000)
    first, second = scheme.membership()
    assert int((first & second).sum()) == 100
    assert bool((first | second).all())


def test_two_subset_scheme_full_overlap():
    scheme = make_two_subset_scheme(1000, 1.0, 10, 10)
    groups = CooccurrenceGroups(scheme)
    assert groups.num_groups == 1
    assert bool(scheme.membership().all())


def test_two_subset_scheme_rejects_invalid():
    with pytest.raises(ValueError):
        make_two_subset_scheme(10, 1.5, 5, 5)
    with pytest.raises(ValueError):
        make_two_subset_scheme(10, 0.2, 0, 5)


def test_multi_subset_scheme_windows():
    scheme = make_multi_subset_scheme(40, 4, 4, 10)
    assert scheme.T == 40
    windows = [seg.ranges for seg in scheme.segments]
    assert windows == [((0, 13),), ((9, 22),), ((18, 31),), ((27, 40),)]
    memb = scheme.membership()
    for m in range(3):
        assert int((memb[m] & memb[m + 1]).sum()) == 4
    assert bool(memb.any(dim=0).all())


def test_multi_subset_scheme_reduces_to_two_subsets():
    assert make_multi_subset_scheme(10, 2, 3, 7) == \
        make_two_subset_scheme(10, 0.3, 7, 7)


def test_multi_subset_scheme_long_chain():
    scheme = make_multi_subset_scheme(1000, 20, 10, 100)
    assert len(scheme) == 20
    assert bool(scheme.membership().any(dim=0).all())


def test_multi_subset_scheme_rejects_invalid():
    with pytest.raises(ValueError):
        make_multi_subset_scheme(10, 1, 2, 5)
    with pytest.raises(ValueError):
        make_multi_subset_scheme(10, 3, 20, 5)


def test_scheme_rejects_gaps():
    with pytest.raises(ValueError):
        ObservationScheme(3, 5, [Segment(0, 2, ((0, 3),)),
                                 Segment(3, 5, ((0, 3),))])
    with pytest.raises(ValueError):
        ObservationScheme(3, 4, [Segment(0, 4, ((0, 4),))])


def test_scheme_json_uses_one_based_indices():
    doc = scheme_to_json(_hand_scheme())
    assert doc['segments'][0] == {'t_start': 1, 't_end': 3,
                                  'ranges': [[1, 4]]}
    assert doc['segments'][1] == {'t_start': 4, 't_end': 6,
                                  'ranges': [[3, 5]]}
    assert scheme_from_json(doc) == _hand_scheme()


def test_scheme_json_rejects_malformed():
    with pytest.raises(DatasetError):
        scheme_from_json({'p': 3, 'T': 4})
    with pytest.raises(DatasetError):
        scheme_from_json({'p': 3, 'T': 4, 'segments': [
            {'t_start': 1, 't_end': 3, 'ranges': [[1, 4]]}]})


def test_hand_enumerated_groups_and_counts():
    groups = compute_cooccurrence_groups(_hand_scheme())
    assert groups.group_of.tolist() == [0, 0, 1, 2]
    pc = groups.pair_counts
    assert pc(0, [0, 0, 1], [1, 2, 2]).tolist() == [3, 3, 3]
    assert pc(0, [0], [3]).tolist() == [0]
    assert pc(0, [2], [3]).tolist() == [3]
    assert pc(0, [2], [2]).tolist() == [6]
    assert pc(1, [3], [0]).tolist() == [1]


def test_full_scheme_single_group():
    groups = CooccurrenceGroups(full_scheme(7, 20))
    assert groups.num_groups == 1
    for s in range(4):
        assert groups.counts(s).tolist() == [[20 - s]]


@settings(max_examples=60, deadline=None)
@given(schemes(), st.integers(0, 6))
def test_group_counts_match_brute_force(scheme, s):
    if s >= scheme.T:
        s = scheme.T - 1
    groups = CooccurrenceGroups(scheme)
    brute = _brute_counts(scheme, s)
    idx = torch.arange(scheme.p)
    grid = groups.counts(s)[groups.group_of[idx][:, None],
                            groups.group_of[idx][None, :]]
    assert torch.equal(grid, brute)


@settings(max_examples=60, deadline=None)
@given(schemes())
def test_groups_partition_by_pattern(scheme):
    groups = CooccurrenceGroups(scheme)
    assert sorted(torch.cat(groups.members).tolist()) == list(range(scheme.p))
    mask = scheme.mask()
    for i in range(scheme.p):
        for j in range(scheme.p):
            same = bool(groups.group_of[i] == groups.group_of[j])
            assert same == torch.equal(mask[:, i], mask[:, j])
    first = [int(m.min()) for m in groups.members]
    assert first == sorted(first)


@settings(max_examples=40, deadline=None)
@given(schemes())
def test_lag_zero_counts_symmetric(scheme):
    counts = CooccurrenceGroups(scheme).counts(0)
    assert torch.equal(counts, counts.T)


@settings(max_examples=40, deadline=None)
@given(schemes(), st.integers(0, 4))
def test_cooccurring_pairs_match_brute_force(scheme, s):
    if s >= scheme.T:
        s = scheme.T - 1
    groups = CooccurrenceGroups(scheme)
    brute = _brute_counts(scheme, s)
    pairs = cooccurring_pairs(groups, s)
    got = set(zip(pairs.rows.tolist(), pairs.cols.tolist()))
    expected = {tuple(ij) for ij in torch.nonzero(brute > 1).tolist()}
    assert got == expected
    never = cooccurring_pairs(groups, s, observed=False)
    got = set(zip(never.rows.tolist(), never.cols.tolist()))
    expected = {tuple(ij) for ij in torch.nonzero(brute == 0).tolist()}
    assert got == expected


def test_sample_pairs_respects_candidates():
    scheme = make_two_subset_scheme(60, 0.1, 30, 30)
    groups = CooccurrenceGroups(scheme)
    g = make_generator(0)
    for s in (0, 2):
        observed = sample_pairs(groups, s, 500, g)
        assert len(observed) == 500
        assert bool((groups.pair_counts(s, observed.rows, observed.cols) >
                     1).all())
        never = sample_pairs(groups, s, 500, g, observed=False)
        assert len(never) == 500
        assert bool(
            (groups.pair_counts(s, never.rows, never.cols) == 0).all())


@pytest.mark.parametrize("k", [300, 1500])
def test_sample_pairs_are_distinct(k):
    groups = CooccurrenceGroups(make_two_subset_scheme(60, 0.1, 30, 30))
    sampled = sample_pairs(groups, 0, k, make_generator(3))
    again = sample_pairs(groups, 0, k, make_generator(3))
    assert len(sampled) == k
    assert torch.unique(sampled.rows * 60 + sampled.cols).numel() == k
    assert torch.equal(sampled.rows, again.rows)
    assert torch.equal(sampled.cols, again.cols)


def test_sample_pairs_enumerates_small_sets():
    groups = CooccurrenceGroups(make_two_subset_scheme(6, 0.34, 4, 4))
    everything = cooccurring_pairs(groups, 0, observed=False)
    sampled = sample_pairs(groups, 0, 10**6, make_generator(1),
                           observed=False)
    assert torch.equal(sampled.rows, everything.rows)
    assert torch.equal(sampled.cols, everything.cols)


def test_masked_series_mean_over_observed_times():
    Y = torch.arange(24, dtype=torch.float64).reshape(6, 4)
    data = MaskedTimeSeries.from_full(Y, _hand_scheme())
    # variable 1 (0-based 0) observed at t = 0..2, variable 4 at t = 3..5
    assert data.per_variable_mean[0].item() == pytest.approx(4.0)
    assert data.per_variable_mean[3].item() == pytest.approx(19.0)
    assert data.per_variable_mean[2].item() == pytest.approx(12.0)
    assert data.observed_count.tolist() == [3, 3, 6, 3]


def test_masked_series_validation():
    scheme = _hand_scheme()
    Y = MaskedTimeSeries.from_full(torch.ones(6, 4), scheme).Y.clone()
    Y[0, 3] = 1.0
    with pytest.raises(DatasetError):
        MaskedTimeSeries(Y, scheme)
    Y = MaskedTimeSeries.from_full(torch.ones(6, 4), scheme).Y.clone()
    Y[4, 2] = float('nan')
    with pytest.raises(DatasetError):
        MaskedTimeSeries(Y, scheme)
    with pytest.raises(DatasetError):
        MaskedTimeSeries(torch.ones(5, 4), scheme)


def test_empirical_cov_hand_example():
    data = MaskedTimeSeries(torch.tensor([[1.0], [-1.0], [2.0]]),
                            full_scheme(1, 3))
    pairs = PairSet(lag=0, rows=torch.tensor([0]), cols=torch.tensor([0]))
    assert empirical_lagged_cov(data, 0, pairs).item() == pytest.approx(7 / 3)


def test_empirical_cov_constant_series():
    data = MaskedTimeSeries(torch.full((10, 2), 3.0), full_scheme(2, 10))
    assert torch.allclose(empirical_lagged_cov(data, 0),
                          torch.zeros(2, 2, dtype=torch.float64))


def test_empirical_cov_matches_sample_covariance():
    g = make_generator(5)
    Y = torch.randn(200, 6, generator=g, dtype=torch.float64)
    data = MaskedTimeSeries(Y, full_scheme(6, 200))
    assert torch.allclose(empirical_lagged_cov(data, 0), torch.cov(Y.T),
                          atol=1e-12)


def test_empirical_cov_masked_matches_brute_force():
    g = make_generator(6)
    scheme = make_two_subset_scheme(8, 0.25, 30, 40)
    data = MaskedTimeSeries.from_full(
        torch.randn(70, 8, generator=g, dtype=torch.float64), scheme)
    Yc = data.centered()
    mask = scheme.mask().to(torch.float64)
    for s in (0, 3):
        num = Yc[s:].T @ Yc[:70 - s]
        count = mask[s:].T @ mask[:70 - s]
        dense = empirical_lagged_cov(data, s)
        ok = count > 1
        assert torch.allclose(dense[ok], (num / (count - 1))[ok], atol=1e-12)
        assert bool(torch.isnan(dense[~ok]).all())

        pairs = cooccurring_pairs(CooccurrenceGroups(scheme), s)
        assert torch.allclose(
            empirical_lagged_cov(data, s, pairs),
            dense[pairs.rows, pairs.cols],
            atol=1e-12)


def test_empirical_cov_rejects_unobserved_pairs():
    scheme = make_two_subset_scheme(8, 0.25, 30, 40)
    data = MaskedTimeSeries.from_full(torch.ones(70, 8), scheme)
    pairs = PairSet(lag=0, rows=torch.tensor([0]), cols=torch.tensor([7]))
    with pytest.raises(InsufficientCoObservationError):
        empirical_lagged_cov(data, 0, pairs)


@pytest.mark.slow
def test_lagged_cov_estimator_is_consistent(make_params, make_data):
    params = make_params(4, 2, seed=21, radius=0.5)
    scheme = make_two_subset_scheme(4, 0.5, 2500, 2500)
    for s in (0, 1):
        draws = torch.stack([
            empirical_lagged_cov(make_data(params, scheme, seed=100 + k), s)
            for k in range(50)
        ])
        seen = torch.isfinite(draws[0])
        mean = draws.mean(dim=0)[seen]
        se = draws.std(dim=0)[seen] / 50**0.5
        exact = predicted_lagged_cov(params, s)[seen]
        # 4 standard errors bound the largest of the ~14 entries per lag
        assert bool(((mean - exact).abs() <= 4 * se).all())
