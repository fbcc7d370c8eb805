# Copyright 2026 The Stitch Authors. All rights reserved.
import copy
import json
import math
from pathlib import Path

from easydict import EasyDict

from ..utils.errors import ConfigError

__all__ = ['load_run_config', 'run_config_from_dict']

# keys of the defaults that are not user-settable from JSON
_INTERNAL_KEYS = ('dtype', 'max_dense_p', 'max_inline_p')


def _line_of(text, section, key=None):
    if text is None:
        return None
    pos = text.find(f'"{section}"')
    if pos < 0:
        return None
    if key is not None:
        key_pos = text.find(f'"{key}"', pos + len(section) + 2)
        if key_pos >= 0:
            pos = key_pos
    return text.count('\n', 0, pos) + 1


class _Checker:

    def __init__(self, text, path):
        self.text = text
        self.path = path

    def fail(self, section, key, message):
        raise ConfigError(
            f'[{section}] {message}',
            line=_line_of(self.text, section, key),
            path=self.path)

    def check(self, cond, section, key, message):
        if not cond:
            self.fail(section, key, message)


def _overlay(dst, src, section, checker, prefix=''):
    for key, value in src.items():
        if key.startswith('__') or key in _INTERNAL_KEYS or key not in dst:
            checker.fail(section, key, f'unknown key {prefix + key!r}')
        if isinstance(dst[key], dict):
            checker.check(
                isinstance(value, dict), section, key,
                f'{prefix + key!r} must be an object')
            _overlay(dst[key], value, section, checker, prefix=key + '.')
        else:
            dst[key] = value


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v):
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        return False
    return math.isfinite(v) or v == math.inf


def _validate(cfg, checker):
    c = checker.check

    sim = cfg.sim
    for key in ('p', 'n', 'T', 'seed'):
        c(_is_int(sim[key]), 'sim', key, f'{key} must be an integer')
    c(0 < sim.n <= sim.p, 'sim', 'n', 'require 0 < n <= p')
    c(sim.T >= 2, 'sim', 'T', 'require T >= 2')
    rng = sim.eig_modulus_range
    c(
        isinstance(rng, (list, tuple)) and len(rng) == 2 and
        all(_is_real(v) for v in rng) and 0 < rng[0] <= rng[1] < 1, 'sim',
        'eig_modulus_range', 'eig_modulus_range must be [lo, hi] within (0, 1)')
    c(
        _is_real(sim.vonmises_kappa) and sim.vonmises_kappa >= 0, 'sim',
        'vonmises_kappa', 'vonmises_kappa must be >= 0')
    c(
        _is_real(sim.private_noise_fraction) and
        0 < sim.private_noise_fraction < 1, 'sim', 'private_noise_fraction',
        'private_noise_fraction must lie in (0, 1)')

    scheme = cfg.scheme
    c(scheme.kind in ('two_subset', 'multi_subset'), 'scheme', 'kind',
      f'unsupported scheme kind {scheme.kind!r}')
    if scheme.kind == 'two_subset':
        c(
            _is_real(scheme.overlap_fraction) and
            0 <= scheme.overlap_fraction <= 1, 'scheme', 'overlap_fraction',
            'overlap_fraction must lie in [0, 1]')
        if scheme.T1 is not None or scheme.T2 is not None:
            c(
                _is_int(scheme.T1) and _is_int(scheme.T2) and
                scheme.T1 >= 1 and scheme.T2 >= 1 and
                scheme.T1 + scheme.T2 == sim.T, 'scheme', 'T1',
                'T1 and T2 must be positive integers summing to sim.T')
    else:
        c(
            _is_int(scheme.k_subsets) and scheme.k_subsets >= 2, 'scheme',
            'k_subsets', 'k_subsets must be an integer >= 2')
        c(
            _is_int(scheme.overlap) and scheme.overlap >= 0, 'scheme',
            'overlap', 'overlap must be a non-negative integer')
        if scheme.T_each is not None:
            c(
                _is_int(scheme.T_each) and
                scheme.T_each * scheme.k_subsets == sim.T, 'scheme', 'T_each',
                'T_each * k_subsets must equal sim.T')
        else:
            c(sim.T % scheme.k_subsets == 0, 'scheme', 'k_subsets',
              'sim.T must be divisible by k_subsets')

    s3id = cfg.s3id
    for key in ('n', 'S', 'batch_size', 'passes', 'monitor_pairs',
                'monitor_every', 'seed', 'init_iters'):
        c(_is_int(s3id[key]), 's3id', key, f'{key} must be an integer')
    c(s3id.init in ('moments', 'random'), 's3id', 'init',
      f'unsupported init {s3id.init!r}')
    c(s3id.init_iters >= 1, 's3id', 'init_iters', 'init_iters must be >= 1')
    c(s3id.n >= 1, 's3id', 'n', 'n must be >= 1')
    c(s3id.S >= 1, 's3id', 'S', 'S must be >= 1')
    c(s3id.batch_size >= 1, 's3id', 'batch_size', 'batch_size must be >= 1')
    c(s3id.passes >= 1, 's3id', 'passes', 'passes must be >= 1')
    c(s3id.mode in ('linear', 'nonlinear'), 's3id', 'mode',
      f'unsupported mode {s3id.mode!r}')
    if s3id.lag_weights is not None:
        c(
            isinstance(s3id.lag_weights, (list, tuple)) and
            len(s3id.lag_weights) == s3id.S + 1 and
            all(_is_real(r) and r >= 0 for r in s3id.lag_weights), 's3id',
            'lag_weights', 'lag_weights must be S+1 non-negative numbers')
    adam = s3id.adam
    c(_is_real(adam.step_size) and adam.step_size > 0, 's3id', 'step_size',
      'adam.step_size must be > 0')
    c(
        _is_real(adam.beta1) and 0 <= adam.beta1 < 1 and
        _is_real(adam.beta2) and 0 <= adam.beta2 < 1, 's3id', 'adam',
        'adam betas must lie in [0, 1)')
    c(_is_real(adam.epsilon) and adam.epsilon > 0, 's3id', 'epsilon',
      'adam.epsilon must be > 0')
    c(adam.schedule in ('constant', 'cosine'), 's3id', 'schedule',
      f'unsupported adam.schedule {adam.schedule!r}')

    sem = cfg.sem
    for key in ('n', 'max_iters', 'restarts', 'seed'):
        c(_is_int(sem[key]), 'sem', key, f'{key} must be an integer')
    c(sem.n >= 1, 'sem', 'n', 'n must be >= 1')
    c(sem.max_iters >= 1, 'sem', 'max_iters', 'max_iters must be >= 1')
    c(sem.restarts >= 1, 'sem', 'restarts', 'restarts must be >= 1')
    c(_is_real(sem.loglik_rel_tol) and sem.loglik_rel_tol > 0, 'sem',
      'loglik_rel_tol', 'loglik_rel_tol must be > 0')
    c(_is_real(sem.cov_converge_tol) and sem.cov_converge_tol >= 0, 'sem',
      'cov_converge_tol', 'cov_converge_tol must be >= 0')
    for key in ('init_var_floor', 'init_ridge'):
        c(_is_real(sem[key]) and sem[key] >= 0, 'sem', key,
          f'{key} must be >= 0')

    fa = cfg.fa
    for key in ('n', 'iters', 'reference', 'seed'):
        c(_is_int(fa[key]), 'fa', key, f'{key} must be an integer')
    c(fa.iters >= 1, 'fa', 'iters', 'iters must be >= 1')

    ev = cfg.eval
    c(
        isinstance(ev.lags, (list, tuple)) and len(ev.lags) > 0 and
        all(_is_int(s) and s >= 0 for s in ev.lags), 'eval', 'lags',
        'lags must be a non-empty list of non-negative integers')
    c(_is_int(ev.pair_sample) and ev.pair_sample >= 1, 'eval',
      'pair_sample', 'pair_sample must be a positive integer')
    c(_is_int(ev.seed), 'eval', 'seed', 'seed must be an integer')


def run_config_from_dict(raw, text=None, path=None):
    r"""
    Overlays a parsed RunConfig document on the registered defaults.

    Args:
        raw (`dict`):
            Parsed JSON document with any of the sections of `STITCH_CONFIGS`.
        text (`str`, *optional*):
            Source text, used to anchor error messages to line numbers.
        path (`str`, *optional*):
            Source path, prefixed to error messages.

    Returns:
        EasyDict: One sub-config per section.
    """
    from . import STITCH_CONFIGS

    checker = _Checker(text, path)
    if not isinstance(raw, dict):
        raise ConfigError('top-level value must be an object', line=1, path=path)

    cfg = EasyDict({k: copy.deepcopy(v) for k, v in STITCH_CONFIGS.items()})
    for section, values in raw.items():
        if section not in STITCH_CONFIGS:
            checker.fail(section, None, f'unknown section {section!r}')
        checker.check(
            isinstance(values, dict), section, None,
            f'section {section!r} must be an object')
        if 'seed' in STITCH_CONFIGS[section]:
            checker.check('seed' in values, section, None,
                          f'section {section!r} must set its seed explicitly')
        _overlay(cfg[section], values, section, checker)

    _validate(cfg, checker)
    return cfg


def load_run_config(path):
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f'cannot read config: {e.strerror}', path=path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, line=e.lineno, path=path)
    return run_config_from_dict(raw, text=text, path=path)
