# Copyright 2026 The Stitch Authors. All rights reserved.
from .shared_config import stitch_shared_cfg
from .stitch_eval import eval_cfg
from .stitch_fa import fa_cfg
from .stitch_s3id import s3id_cfg
from .stitch_sem import sem_cfg
from .stitch_sim import scheme_cfg, sim_cfg

STITCH_CONFIGS = {
    'sim': sim_cfg,
    'scheme': scheme_cfg,
    's3id': s3id_cfg,
    'sem': sem_cfg,
    'fa': fa_cfg,
    'eval': eval_cfg,
}

FIT_METHODS = ('s3id', 'sem', 's3id+sem', 'fa-posthoc')

from .run_config import load_run_config, run_config_from_dict  # noqa: E402
