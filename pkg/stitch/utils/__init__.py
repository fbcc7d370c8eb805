# Copyright 2026 The Stitch Authors. All rights reserved.
from .errors import *  # noqa: F401,F403
from .utils import (
    make_generator,
    project_psd,
    psd_sqrt,
    spectral_radius,
    str2bool,
    substream_seed,
    symmetrize,
    warn,
)
