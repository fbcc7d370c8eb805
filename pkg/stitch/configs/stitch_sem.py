# Copyright 2026 The Stitch Authors. All rights reserved.
from easydict import EasyDict

from .shared_config import stitch_shared_cfg

#------------------------ Stitch sEM ------------------------#

sem_cfg = EasyDict(__name__='Config: Stitch sEM')
sem_cfg.update(stitch_shared_cfg)

sem_cfg.n = 10
sem_cfg.max_iters = 200
sem_cfg.loglik_rel_tol = 1e-8
sem_cfg.cov_converge_tol = 1e-9  # 0 disables covariance freezing
sem_cfg.restarts = 4

# relative log-likelihood drop treated as a broken EM step
sem_cfg.monotonicity_tol = 1e-6

# conditioning of a given starting point (e.g. an S3ID estimate)
sem_cfg.init_var_floor = 1e-3
sem_cfg.init_ridge = 1e-6

sem_cfg.seed = 0
