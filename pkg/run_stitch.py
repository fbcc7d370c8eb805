# Copyright 2026 The Stitch Authors. All rights reserved.
import argparse
import copy
import logging
import os
import sys
import warnings

warnings.filterwarnings('ignore', category=UserWarning, module='torch')

import torch

from stitch.configs import (
    FIT_METHODS,
    STITCH_CONFIGS,
    load_run_config,
    run_config_from_dict,
)
from stitch.evaluation import evaluate
from stitch.modules import (
    MaskedTimeSeries,
    fa_posthoc,
    generate_random_lds,
    make_multi_subset_scheme,
    make_two_subset_scheme,
    scheme_from_json,
    simulate,
)
from stitch.s3id import StitchS3ID
from stitch.sem import StitchEM
from stitch.utils import (
    ConfigError,
    DatasetError,
    NumericalError,
    str2bool,
    substream_seed,
)
from stitch.utils.io import (
    SCHEME_FILE,
    TRUTH_FILE,
    load_params,
    read_dataset,
    read_json,
    save_params,
    write_dataset,
    write_diagnostics,
    write_report,
    write_trace,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

COMMANDS = ('simulate', 'fit', 'eval')


def _validate_args(args):
    # Basic check
    assert args.command in COMMANDS, f"Unsupport command: {args.command}"
    assert args.out is not None, "Please specify the output directory."

    if args.command == 'simulate':
        assert args.config is not None, \
            "Please specify the run config for simulate."
    if args.command == 'fit':
        assert args.data is not None, "Please specify the dataset directory."
        assert args.method in FIT_METHODS, f"Unsupport method: {args.method}"
    if args.command == 'eval':
        assert args.params is not None, "Please specify the fitted params."
        assert args.truth is not None, \
            "Please specify the ground-truth params or held-out data."
        if args.scheme is None and os.path.isdir(args.truth):
            args.scheme = os.path.join(args.truth, SCHEME_FILE)
        assert args.scheme is not None, \
            "Please specify the observation scheme of the fitted data."

    if args.threads is None and os.getenv('STITCH_THREADS'):
        threads = os.getenv('STITCH_THREADS')
        assert threads.strip().isdigit(), \
            f"STITCH_THREADS must be a positive integer, got {threads!r}"
        args.threads = int(threads)
    if args.threads is not None:
        assert args.threads >= 1, f"Invalid thread count: {args.threads}"


def _parse_args(argv=None):
    parser = argparse.ArgumentParser(
        description="Simulate, fit and evaluate latent linear dynamical "
        "systems stitched from partially overlapping recordings")
    parser.add_argument(
        "command",
        type=str,
        choices=COMMANDS,
        help="The pipeline step to run.")
    parser.add_argument(
        "--config",
        type=str,
        default=None,
        help="The path to the JSON run config. Sections that are left out "
        "keep their defaults.")
    parser.add_argument(
        "--out",
        type=str,
        default=None,
        help="The output directory.")
    parser.add_argument(
        "--method",
        type=str,
        default="s3id",
        choices=list(FIT_METHODS),
        help="The fitting method (fit only).")
    parser.add_argument(
        "--data",
        type=str,
        default=None,
        help="The dataset directory to fit (fit only).")
    parser.add_argument(
        "--params",
        type=str,
        default=None,
        help="The fitted params.json to evaluate (eval only).")
    parser.add_argument(
        "--truth",
        type=str,
        default=None,
        help="Ground truth for eval: a params JSON, a dataset directory with "
        "truth.json, or a held-out fully observed dataset directory.")
    parser.add_argument(
        "--scheme",
        type=str,
        default=None,
        help="The observation scheme JSON of the fitted data. Overrides the "
        "dataset's scheme.json for fit.")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Number of intra-op threads, falls back to $STITCH_THREADS.")
    parser.add_argument(
        "--deterministic",
        type=str2bool,
        default=False,
        help="Whether to use deterministic reductions only.")
    parser.add_argument(
        "--progress",
        type=str2bool,
        default=True,
        help="Whether to show progress bars.")

    args = parser.parse_args(argv)
    _validate_args(args)
    return args


def _init_logging():
    # logging
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(
            level=logging.INFO,
            format="[%(asctime)s] %(levelname)s: %(message)s",
            handlers=[logging.StreamHandler(stream=sys.stdout)])


def _load_config(path):
    if path is None:
        return run_config_from_dict({})
    return load_run_config(path)


def build_scheme(sim, scheme):
    """Observation scheme of a simulation from the `sim` and `scheme`
    sections of a run config."""
    if scheme.kind == 'two_subset':
        T1 = scheme.T1 if scheme.T1 is not None else sim.T // 2
        T2 = scheme.T2 if scheme.T2 is not None else sim.T - T1
        return make_two_subset_scheme(sim.p, scheme.overlap_fraction, T1, T2)
    T_each = scheme.T_each if scheme.T_each is not None else \
        sim.T // scheme.k_subsets
    return make_multi_subset_scheme(sim.p, scheme.k_subsets, scheme.overlap,
                                    T_each)


def cmd_simulate(args, cfg):
    logging.info(f"Simulation config: {cfg.sim}")
    logging.info(f"Scheme config: {cfg.scheme}")
    scheme = build_scheme(cfg.sim, cfg.scheme)
    truth = generate_random_lds(cfg.sim)
    Y, _ = simulate(truth, cfg.sim.T, substream_seed(cfg.sim.seed, 'sim'))
    data = MaskedTimeSeries.from_full(Y, scheme)
    write_dataset(args.out, data.Y, scheme, truth=truth)


def _fit_s3id_then_sem(data, cfg, progress):
    if cfg.s3id.mode != 'linear':
        raise ConfigError('s3id+sem needs s3id.mode = "linear"')
    if cfg.s3id.n != cfg.sem.n:
        raise ConfigError(
            f's3id+sem needs matching latent dimensions, got '
            f's3id.n={cfg.s3id.n} and sem.n={cfg.sem.n}')
    s3id_cfg = copy.deepcopy(cfg.s3id)
    s3id_cfg.passes = 1
    init, s3id_trace = StitchS3ID(s3id_cfg).fit(data, progress=progress)
    logging.info("Initializing sEM from a single S3ID pass.")
    em = StitchEM(cfg.sem)
    params, trace = em.fit(data, init=init, progress=progress)
    return params, trace, s3id_trace, em.offset


def cmd_fit(args, cfg):
    data, _ = read_dataset(args.data, scheme_path=args.scheme)
    logging.info(f"Fitting {args.method} to T={data.T}, p={data.p} with "
                 f"{len(data.scheme)} segments.")
    offset = None
    if args.method == 's3id':
        logging.info(f"S3ID config: {cfg.s3id}")
        params, trace = StitchS3ID(cfg.s3id).fit(data, progress=args.progress)
        columns = ('step', 'monitor_loss', 'wall_time_s')
    elif args.method == 'sem':
        logging.info(f"sEM config: {cfg.sem}")
        em = StitchEM(cfg.sem)
        params, trace = em.fit(data, progress=args.progress)
        offset = em.offset
        columns = ('iter', 'loglik', 'wall_time_s')
    elif args.method == 's3id+sem':
        params, trace, s3id_trace, offset = _fit_s3id_then_sem(
            data, cfg, args.progress)
        write_trace(
            os.path.join(args.out, 's3id_trace.csv'), s3id_trace,
            ('step', 'monitor_loss', 'wall_time_s'))
        columns = ('iter', 'loglik', 'wall_time_s')
    else:
        logging.info(f"FA config: {cfg.fa}")
        params, fa_traces = fa_posthoc(
            data,
            cfg.fa.n,
            iters=cfg.fa.iters,
            reference=cfg.fa.reference,
            seed=substream_seed(cfg.fa.seed, 'init'),
            progress=args.progress)
        trace = [{
            'session': k, 'iter': it, 'loglik': ll
        } for k, lls in enumerate(fa_traces) for it, ll in enumerate(lls)]
        columns = ('session', 'iter', 'loglik')

    save_params(
        os.path.join(args.out, 'params.json'),
        params,
        max_inline_p=STITCH_CONFIGS['s3id'].max_inline_p,
        offset=offset,
        method=args.method)
    write_trace(os.path.join(args.out, 'trace.csv'), trace, columns)
    logging.info(f"Saved parameters and trace to {args.out}")


def _load_truth(path):
    if os.path.isdir(path):
        if os.path.exists(os.path.join(path, TRUTH_FILE)):
            return load_params(os.path.join(path, TRUTH_FILE))
        held_out, _ = read_dataset(path)
        return held_out
    return load_params(path)


def cmd_eval(args, cfg):
    model = load_params(args.params)
    truth = _load_truth(args.truth)
    scheme = scheme_from_json(read_json(args.scheme))
    method = read_json(args.params).get('method')
    logging.info(f"Evaluation config: {cfg.eval}")
    report = evaluate(model, truth, scheme, cfg.eval, method=method)
    write_report(os.path.join(args.out, 'report.json'), report)
    logging.info(f"projection error {report.projection_error}, largest "
                 f"principal angle {report.largest_principal_angle}, "
                 f"correlations {report.prediction_correlation}")


def run(args):
    cfg = _load_config(args.config)
    if args.threads is not None:
        torch.set_num_threads(args.threads)
    if args.deterministic:
        torch.use_deterministic_algorithms(True)
    logging.info(f"Stitch job args: {args}")

    os.makedirs(args.out, exist_ok=True)
    if args.command == 'simulate':
        cmd_simulate(args, cfg)
    elif args.command == 'fit':
        cmd_fit(args, cfg)
    else:
        cmd_eval(args, cfg)
    logging.info("Finished.")


def main(argv=None):
    _init_logging()
    try:
        args = _parse_args(argv)
    except AssertionError as e:
        logging.error(str(e))
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    try:
        run(args)
    except NumericalError as e:
        logging.error(f"Numerical failure: {e}")
        write_diagnostics(args.out, e)
        return EXIT_NUMERICAL
    except ConfigError as e:
        logging.error(f"Invalid config: {e}")
        return EXIT_USAGE
    except (DatasetError, OSError) as e:
        logging.error(f"I/O failure: {e}")
        return EXIT_IO
    except (AssertionError, ValueError) as e:
        logging.error(str(e))
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
