# Copyright 2026 The Stitch Authors. All rights reserved.
from easydict import EasyDict

from .shared_config import stitch_shared_cfg

#------------------------ Stitch FA + post-hoc alignment ------------------------#

fa_cfg = EasyDict(__name__='Config: Stitch FA post-hoc baseline')
fa_cfg.update(stitch_shared_cfg)

fa_cfg.n = 10
fa_cfg.iters = 100
fa_cfg.reference = 0  # session whose latent coordinates are kept
fa_cfg.seed = 0
