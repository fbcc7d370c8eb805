# Copyright 2026 The Stitch Authors. All rights reserved.
import argparse
import logging
import warnings
import zlib

import torch

__all__ = [
    'str2bool', 'make_generator', 'symmetrize', 'project_psd', 'psd_sqrt',
    'spectral_radius', 'warn', 'substream_seed'
]


def str2bool(v):
    """
    Convert a string to a boolean.

    Supported true values: 'yes', 'true', 't', 'y', '1'
    Supported false values: 'no', 'false', 'f', 'n', '0'

    Args:
        v (str): String to convert.

    Returns:
        bool: Converted boolean value.

    Raises:
        argparse.ArgumentTypeError: If the value cannot be converted to boolean.
    """
    if isinstance(v, bool):
        return v
    v_lower = v.lower()
    if v_lower in ('yes', 'true', 't', 'y', '1'):
        return True
    elif v_lower in ('no', 'false', 'f', 'n', '0'):
        return False
    else:
        raise argparse.ArgumentTypeError('Boolean value expected (True/False)')


def make_generator(seed):
    seed_g = torch.Generator()
    seed_g.manual_seed(int(seed))
    return seed_g


def symmetrize(M):
    return 0.5 * (M + M.transpose(-1, -2))


def project_psd(M, floor=0.0):
    """
    Symmetrizes `M` and clamps its eigenvalues at `floor`.
    """
    evals, evecs = torch.linalg.eigh(symmetrize(M))
    evals = evals.clamp(min=floor)
    return symmetrize((evecs * evals) @ evecs.T)


def psd_sqrt(M):
    r"""
    Returns a factor L with L @ L.T == M for a symmetric PSD matrix `M`.
    Unlike a Cholesky factor this also exists for singular `M`.
    """
    evals, evecs = torch.linalg.eigh(symmetrize(M))
    return evecs * evals.clamp(min=0.0).sqrt()


def spectral_radius(A):
    if A.numel() == 0:
        return 0.0
    return torch.linalg.eigvals(A).abs().max().item()


def warn(message):
    warnings.warn(message)
    logging.warning(message)


def substream_seed(seed, name):
    """Seed of the named random substream ('sim', 'init', 'batch', 'eval')
    derived from a config seed."""
    return (int(seed) * 1000003 + zlib.crc32(name.encode())) % 2**63
