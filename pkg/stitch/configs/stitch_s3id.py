# Copyright 2026 The Stitch Authors. All rights reserved.
from easydict import EasyDict

from .shared_config import stitch_shared_cfg

#------------------------ Stitch S3ID ------------------------#

s3id_cfg = EasyDict(__name__='Config: Stitch S3ID')
s3id_cfg.update(stitch_shared_cfg)

# model
s3id_cfg.n = 10
s3id_cfg.S = 5
s3id_cfg.mode = 'linear'  # 'linear' (Π_s = A^s Π₀) or 'nonlinear' (free Π_s)

# loss weights r_s for s = 0..S, None means all ones
s3id_cfg.lag_weights = None

# initialization: 'moments' (alternating least squares on the observed
# covariances) or 'random'
s3id_cfg.init = 'moments'
s3id_cfg.init_iters = 30

# optimization, schedule is 'cosine' or 'constant'
s3id_cfg.batch_size = 100
s3id_cfg.passes = 1
s3id_cfg.adam = EasyDict(
    step_size=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8, schedule='cosine')

# monitoring loss on held covariance entries
s3id_cfg.monitor_pairs = 10000
s3id_cfg.monitor_every = 100

s3id_cfg.seed = 0
