# Copyright 2026 The Stitch Authors. All rights reserved.
from easydict import EasyDict

#------------------------ Stitch evaluation ------------------------#

eval_cfg = EasyDict(__name__='Config: Stitch evaluation')

eval_cfg.lags = [0, 1, 2, 3, 4, 5]
eval_cfg.pair_sample = 1000000
eval_cfg.seed = 0
