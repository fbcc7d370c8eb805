# Copyright 2026 The Stitch Authors. All rights reserved.
from easydict import EasyDict

#------------------------ Stitch LDS simulation ------------------------#

sim_cfg = EasyDict(__name__='Config: Stitch LDS simulation')

sim_cfg.p = 1000
sim_cfg.n = 10
sim_cfg.T = 100000
sim_cfg.eig_modulus_range = (0.9, 0.99)
sim_cfg.vonmises_kappa = 1000.0
sim_cfg.private_noise_fraction = 0.5
sim_cfg.seed = 0

#------------------------ Stitch observation scheme ------------------------#

scheme_cfg = EasyDict(__name__='Config: Stitch observation scheme')

# 'two_subset' or 'multi_subset'
scheme_cfg.kind = 'two_subset'

# two_subset: overlap as a fraction of p, session lengths (None splits T evenly)
scheme_cfg.overlap_fraction = 0.05
scheme_cfg.T1 = None
scheme_cfg.T2 = None

# multi_subset: number of windows, overlap in variables, session length
scheme_cfg.k_subsets = 20
scheme_cfg.overlap = 10
scheme_cfg.T_each = None
