# Copyright 2026 The Stitch Authors. All rights reserved.
import torch
from easydict import EasyDict

#------------------------ Stitch shared config ------------------------#
stitch_shared_cfg = EasyDict()

# numerics
stitch_shared_cfg.dtype = torch.float64

# Λ(s) is never materialized as a dense p×p matrix above this size
stitch_shared_cfg.max_dense_p = 20000

# params.json stores C inline up to this many variables, as a sidecar above
stitch_shared_cfg.max_inline_p = 10000
