# Copyright 2026 The Stitch Authors. All rights reserved.
from .factor_analysis import estimate_dynamics, fa_em, fa_posthoc, posthoc_align
from .hankel import block_hankel, hankel_ssid
from .kalman import (
    FilteredMoments,
    SmoothedPosterior,
    kalman_filter_subset,
    kalman_smooth,
)
from .lds import (
    LatentMoments,
    LdsParams,
    generate_random_lds,
    latent_lagged_cov,
    predicted_lagged_cov,
    simulate,
    solve_stationary_covariance,
)
from .observation import (
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
    sample_pairs,
    scheme_from_json,
    scheme_to_json,
)

__all__ = [
    'LdsParams', 'LatentMoments', 'generate_random_lds',
    'solve_stationary_covariance', 'latent_lagged_cov', 'predicted_lagged_cov',
    'simulate', 'Segment', 'ObservationScheme', 'CooccurrenceGroups',
    'MaskedTimeSeries', 'PairSet', 'make_two_subset_scheme',
    'make_multi_subset_scheme', 'full_scheme', 'compute_cooccurrence_groups',
    'empirical_lagged_cov', 'cooccurring_pairs', 'sample_pairs',
    'scheme_to_json', 'scheme_from_json', 'FilteredMoments',
    'SmoothedPosterior', 'kalman_filter_subset', 'kalman_smooth',
    'block_hankel', 'hankel_ssid', 'fa_em', 'posthoc_align',
    'estimate_dynamics', 'fa_posthoc'
]
