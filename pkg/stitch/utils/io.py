# Copyright 2026 The Stitch Authors. All rights reserved.
import csv
import json
import logging
import os

import numpy as np
import torch

from ..modules.lds import LatentMoments, LdsParams
from ..modules.observation import (
    MaskedTimeSeries,
    scheme_from_json,
    scheme_to_json,
)
from .errors import DatasetError

__all__ = [
    'write_dataset', 'read_dataset', 'save_params', 'load_params',
    'write_trace', 'write_report', 'write_diagnostics', 'write_json',
    'read_json'
]

DATA_FILE = 'data.bin'
HEADER_FILE = 'data.json'
SCHEME_FILE = 'scheme.json'
TRUTH_FILE = 'truth.json'


def write_json(path, doc):
    with open(path, 'w') as f:
        json.dump(doc, f, indent=2)
        f.write('\n')


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError(f'{path}:{e.lineno}: {e.msg}') from e


def _write_matrix(path, M):
    np.ascontiguousarray(M.detach().cpu().numpy(), dtype='<f8').tofile(path)


def _read_matrix(path, shape):
    expected = int(np.prod(shape)) * 8
    size = os.path.getsize(path)
    if size != expected:
        raise DatasetError(
            f'{path} holds {size} bytes, expected {expected} for shape '
            f'{tuple(shape)}')
    return torch.from_numpy(np.fromfile(path, dtype='<f8').reshape(shape))


def write_dataset(out_dir, Y, scheme, truth=None):
    r"""
    Writes a dataset directory: data.bin (little-endian float64, time-major,
    NaN outside Ω_t), data.json, scheme.json and optionally truth.json.
    """
    os.makedirs(out_dir, exist_ok=True)
    T, p = Y.shape
    _write_matrix(os.path.join(out_dir, DATA_FILE), Y)
    write_json(os.path.join(out_dir, HEADER_FILE), {
        'p': p, 'T': T, 'dtype': 'f64', 'layout': 'time-major'})
    write_json(os.path.join(out_dir, SCHEME_FILE), scheme_to_json(scheme))
    if truth is not None:
        save_params(os.path.join(out_dir, TRUTH_FILE), truth)
    logging.info(f"Wrote dataset T={T}, p={p} to {out_dir}.")


def read_dataset(data_dir, scheme_path=None):
    """
    Reads a dataset directory.

    Returns:
        tuple[MaskedTimeSeries, LdsParams | None]: Data and, if present, the
        generating parameters.
    """
    header = read_json(os.path.join(data_dir, HEADER_FILE))
    if header.get('dtype') != 'f64' or header.get('layout') != 'time-major':
        raise DatasetError(f'unsupported data header {header}')
    scheme = scheme_from_json(
        read_json(scheme_path or os.path.join(data_dir, SCHEME_FILE)))
    if (scheme.T, scheme.p) != (header['T'], header['p']):
        raise DatasetError(
            f'scheme (T={scheme.T}, p={scheme.p}) does not match the data '
            f'header (T={header["T"]}, p={header["p"]})')
    Y = _read_matrix(os.path.join(data_dir, DATA_FILE),
                     (header['T'], header['p']))
    data = MaskedTimeSeries(Y, scheme)
    truth_path = os.path.join(data_dir, TRUTH_FILE)
    truth = load_params(truth_path) if os.path.exists(truth_path) else None
    return data, truth


def _tolist(M):
    return M.detach().cpu().tolist()


def save_params(path, model, max_inline_p=10000, offset=None, method=None):
    r"""
    Writes parameters as JSON. Above `max_inline_p` variables C goes to a
    `<path stem>.C.bin` sidecar (little-endian float64, row-major).

    Args:
        path (`str`): Output JSON path.
        model (`LdsParams` or `tuple`): Linear-mode parameters or
            `(C, LatentMoments, R)`.
        offset (`torch.Tensor`, *optional*): Per-variable offset.
        method (`str`, *optional*): Fitting method, recorded for reports.
    """
    if isinstance(model, LdsParams):
        C, R = model.C, model.R
        doc = {'kind': 'lds', 'A': _tolist(model.A), 'Q': _tolist(model.Q),
               'Pi0': _tolist(model.Pi0)}
    else:
        C, moments, R = model
        doc = {'kind': 'moments', 'Pi': [_tolist(P) for P in moments.lags]}
    p, n = C.shape
    doc.update(p=p, n=n, R=_tolist(R))
    if p > max_inline_p:
        sidecar = os.path.splitext(path)[0] + '.C.bin'
        _write_matrix(sidecar, C)
        doc['C'] = {'file': os.path.basename(sidecar), 'shape': [p, n]}
    else:
        doc['C'] = _tolist(C)
    if offset is not None:
        doc['offset'] = _tolist(offset)
    if method is not None:
        doc['method'] = method
    write_json(path, doc)


def _as_tensor(v):
    return torch.tensor(v, dtype=torch.float64)


def load_params(path):
    doc = read_json(path)
    as_t = _as_tensor
    try:
        p, n = int(doc['p']), int(doc['n'])
        if isinstance(doc['C'], dict):
            sidecar = os.path.join(os.path.dirname(path), doc['C']['file'])
            C = _read_matrix(sidecar, (p, n))
        else:
            C = as_t(doc['C']).reshape(p, n)
        R = as_t(doc['R']).reshape(p)
        if doc['kind'] == 'lds':
            return LdsParams(A=as_t(doc['A']).reshape(n, n), C=C,
                             Q=as_t(doc['Q']).reshape(n, n), R=R,
                             Pi0=as_t(doc['Pi0']).reshape(n, n))
        if doc['kind'] == 'moments':
            lags = [as_t(P).reshape(n, n) for P in doc['Pi']]
            return (C, LatentMoments(lags=lags), R)
        raise DatasetError(f'{path}: unknown parameter kind {doc["kind"]!r}')
    except (KeyError, TypeError, ValueError, RuntimeError) as e:
        raise DatasetError(f'{path}: malformed parameters ({e})') from e


def write_trace(path, trace, columns):
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(columns))
        writer.writeheader()
        for row in trace:
            writer.writerow({k: row[k] for k in columns})


def write_report(out_path, report):
    r"""
    Writes report.json at `out_path` plus spectra.csv and correlations.csv in
    the same directory.
    """
    out_dir = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(out_dir, exist_ok=True)
    write_json(out_path, report.to_json())

    with open(os.path.join(out_dir, 'spectra.csv'), 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['matrix', 'k', 'value', 'ratio_to_previous'])
        for name in ('Pi0', 'A'):
            values = report.spectra.get(name)
            if values is None:
                continue
            ratios = [None] + report.spectra[f'{name}_ratios']
            for k, (v, r) in enumerate(zip(values, ratios), start=1):
                writer.writerow([name, k, v, '' if r is None else r])

    with open(os.path.join(out_dir, 'correlations.csv'), 'w',
              newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['lag', 'correlation', 'num_pairs'])
        for s, corr in report.prediction_correlation.items():
            writer.writerow(
                [s, '' if corr is None else corr, report.num_pairs.get(s, 0)])


def write_diagnostics(out_dir, error):
    doc = {'error': type(error).__name__, 'message': str(error)}
    for key in ('step', 'parameter', 't', 'sessions', 'line'):
        value = getattr(error, key, None)
        if value is not None:
            doc[key] = value
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, 'diagnostics.json'), doc)
