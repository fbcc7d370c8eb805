# Copyright 2026 The Stitch Authors. All rights reserved.
from . import configs, modules, utils
from .evaluation import EvalReport, evaluate
from .s3id import StitchS3ID, fit_s3id
from .sem import StitchEM, fit_sem
