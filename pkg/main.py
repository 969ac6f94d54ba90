#!/usr/bin/env python3
"""
Map-based MIMO channel estimation
Command-line entry point: dataset generation, estimation, training, evaluation, sweeps and plots
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from logging.handlers import RotatingFileHandler

from core.errors import ConfigurationError, MbceError, NumericalError, ValidationError
from core.settings_manager import SettingsManager
from version import __version__

LOG_FILE = 'mbce.log'
EXIT_OK, EXIT_FAILURE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

logger = logging.getLogger('mbce')


def setup_logging(log_dir=None, verbose=False):
    """Rotating file log plus console output; replaces handlers installed by an earlier call"""
    log_file = os.path.join(log_dir, LOG_FILE) if log_dir else LOG_FILE
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
    level = logging.DEBUG if verbose else logging.INFO

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    # 5MB per file, keep 3 backups
    file_handler = RotatingFileHandler(
        log_file,
        maxBytes=5*1024*1024,
        backupCount=3,
        encoding='utf-8'
    )
    file_handler.setFormatter(formatter)
    file_handler.setLevel(level)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(level)

    root_logger = logging.getLogger()
    for handler in list(getattr(setup_logging, 'installed', [])):
        root_logger.removeHandler(handler)
        handler.close()
    root_logger.setLevel(level)
    root_logger.addHandler(file_handler)
    root_logger.addHandler(console_handler)
    setup_logging.installed = [file_handler, console_handler]

    return root_logger


def _float_list(text):
    return [float(v) for v in text.split(',') if v.strip()]


def _int_list(text):
    return [int(v) for v in text.split(',') if v.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog='mbce', description='Map-based MIMO channel estimation')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON settings file merged over the defaults')
    common.add_argument('--out', help='output directory (also receives the log file)')
    common.add_argument('--seed', type=int, help='master seed')
    common.add_argument('--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', parents=[common], help='generate a dataset bundle')
    gen.add_argument('--scene', help="scene JSON file, or the preset 'random' / 'canyon'")
    gen.add_argument('--samples', type=int, help='number of samples')
    gen.add_argument('--velocity', type=float, help='trajectory speed in m/s (enables trajectories)')
    gen.add_argument('--step-s', type=float, help='trajectory time step in seconds')

    for name, text in (('estimate', 'per-sample NMSE of one method'), ('eval', 'score a trained network')):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('--bundle', required=True, help='dataset bundle directory')
        p.add_argument('--pilots', type=int, help='pilot count')
        p.add_argument('--snr-db', type=float, help='pilot SNR in dB')
        p.add_argument('--horizon', type=int, default=1, help='score the snapshot this many steps ahead')
        p.add_argument('--split', choices=('all', 'train', 'val', 'test'), default='all')
        p.add_argument('--registry', help='SQLite run registry file')
    sub.choices['estimate'].add_argument('--method', required=True,
                                         help='ls-interp, ls-dft, ls-ofdm, somp, omp, sp or pinn:<checkpoint>')
    sub.choices['eval'].add_argument('--checkpoint', required=True, help='trained network checkpoint')
    sub.choices['eval'].set_defaults(split='test')

    tr = sub.add_parser('train', parents=[common], help='train the refinement network')
    tr.add_argument('--bundle', required=True)
    tr.add_argument('--pilots', type=int)
    tr.add_argument('--snr-db', type=float)
    tr.add_argument('--epochs', type=int)
    tr.add_argument('--horizon', type=int, help='number of predicted snapshots L')
    tr.add_argument('--zeta', type=float, help='physics-term weight')
    tr.add_argument('--init-checkpoint', help='fine-tune from this checkpoint')

    sw = sub.add_parser('sweep', parents=[common], help='NMSE curves over one axis')
    sw.add_argument('--bundle', required=True)
    sw.add_argument('--axis', required=True, choices=('snr_db', 'pilot_count', 'pilot_density', 'horizon_L'))
    sw.add_argument('--values', required=True, type=_float_list, help='comma-separated axis values')
    sw.add_argument('--methods', required=True, help='comma-separated method names')
    sw.add_argument('--seeds', type=_int_list, help='comma-separated seeds')
    sw.add_argument('--pilots', type=int)
    sw.add_argument('--snr-db', type=float)
    sw.add_argument('--split', choices=('all', 'train', 'val', 'test'), default='all')
    sw.add_argument('--registry')

    pl = sub.add_parser('plot', parents=[common], help='render the RSS map and sample crops')
    pl.add_argument('--bundle', required=True)
    pl.add_argument('--crops', type=int, default=4, help='number of sample crops to render')
    return parser


def load_settings(args):
    settings = SettingsManager(settings_file=None)
    if args.config and not settings.import_settings(args.config):
        raise ConfigurationError(f"settings file {args.config} is missing or invalid")
    if args.seed is not None:
        settings.set_setting('harness.seed', args.seed)
        settings.set_setting('train.seed', args.seed)
        settings.set_setting('scene.seed', args.seed)
    overrides = {
        'pilots': 'estimators.pilot_count', 'snr_db': 'estimators.snr_db', 'samples': 'harness.n_samples',
        'epochs': 'train.epochs', 'zeta': 'train.zeta',
    }
    for attr, key in overrides.items():
        value = getattr(args, attr, None)
        if value is not None:
            settings.set_setting(key, value)
    if getattr(args, 'command', None) == 'train' and args.horizon is not None:
        settings.set_setting('pinn.multi_step_L', args.horizon)
    validation = settings.validate_settings()
    if not validation['valid']:
        raise ConfigurationError('; '.join(validation['errors']))
    return settings


def _estimator_settings(settings):
    from harness.experiments import EstimatorSettings

    return EstimatorSettings(
        n_fft=settings.get_setting('estimators.n_fft'),
        grid_factor=settings.get_setting('estimators.grid_factor'),
        max_sparsity=settings.get_setting('estimators.max_sparsity'),
    )


def _split(bundle, settings, which):
    from harness.dataset import split_indices

    if which == 'all':
        return None
    parts = split_indices(bundle, settings.get_setting('harness.split'), settings.get_setting('harness.split_mode'),
                          settings.get_setting('train.seed'))
    return parts[('train', 'val', 'test').index(which)]


def _registry(path):
    if not path:
        return None
    from harness.run_registry import RunRegistry

    return RunRegistry(path)


def _write_json(data, filename):
    with open(filename, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)


def cmd_gen(args, settings, out_dir):
    from harness.dataset import TrajectorySpec, generate_dataset, save_bundle

    if not args.out:
        raise ConfigurationError("gen needs --out for the bundle directory")
    if args.scene in ('random', 'canyon'):
        settings.set_setting('scene.preset', args.scene)
        settings.set_setting('scene.file', None)
    elif args.scene:
        settings.set_setting('scene.file', args.scene)
    scene = settings.scene()
    trajectory = None
    velocity = args.velocity or settings.get_setting('harness.trajectory_velocity_mps')
    if velocity:
        step = args.step_s or settings.get_setting('harness.trajectory_step_s')
        if step is None:
            raise ConfigurationError("trajectory generation needs --step-s")
        trajectory = TrajectorySpec(float(velocity), float(step))
    bundle = generate_dataset(
        scene, settings.array_config(), settings.waveform_config(),
        n_samples=settings.get_setting('harness.n_samples'),
        seed=settings.get_setting('harness.seed'),
        resolution_m=settings.get_setting('propagation.resolution_m'),
        crop_m=settings.get_setting('estimators.crop_m'),
        gps_sigma_m=settings.get_setting('estimators.gps_sigma_m'),
        max_order=settings.get_setting('propagation.max_order'),
        rx_height_m=settings.get_setting('propagation.rx_height_m'),
        trajectory=trajectory,
        workers=settings.get_setting('propagation.workers'),
    )
    save_bundle(bundle, out_dir)
    settings.export_settings(os.path.join(out_dir, 'settings.json'))
    return EXIT_OK


def _record(registry, command, params, result, bundle):
    if registry is None:
        return
    from harness.dataset import bundle_hash

    registry.record_run(command, params, method=result.method, bundle_hash=bundle_hash(bundle),
                        samples=len(result.rows), aggregate_nmse_db=result.aggregate_db)


def cmd_estimate(args, settings, out_dir):
    from harness.dataset import load_bundle
    from harness.experiments import run_estimate, write_estimate_csv

    bundle = load_bundle(args.bundle)
    pilots = settings.get_setting('estimators.pilot_count')
    snr = settings.get_setting('estimators.snr_db')
    seed = settings.get_setting('harness.seed')
    result = run_estimate(bundle, args.method, pilots, snr, seed, _split(bundle, settings, args.split),
                          _estimator_settings(settings), args.horizon)
    write_estimate_csv([result], os.path.join(out_dir, 'estimate.csv'))
    summary = {'method': args.method, 'Np': pilots, 'snr_db': snr, 'seed': seed, 'samples': len(result.rows),
               'aggregate_nmse_db': result.aggregate_db, 'mean_of_db': result.mean_of_db}
    _write_json(summary, os.path.join(out_dir, 'estimate_summary.json'))
    _record(_registry(args.registry), 'estimate', summary, result, bundle)
    return EXIT_OK


def cmd_eval(args, settings, out_dir):
    from harness.dataset import load_bundle
    from harness.experiments import PINN_PREFIX, load_refiner, run_estimate, write_estimate_csv

    bundle = load_bundle(args.bundle)
    pilots = settings.get_setting('estimators.pilot_count')
    snr = settings.get_setting('estimators.snr_db')
    seed = settings.get_setting('harness.seed')
    indices = _split(bundle, settings, args.split)
    initial = load_refiner(args.checkpoint).initial_method
    registry = _registry(args.registry)
    results = []
    for method in (initial, PINN_PREFIX + args.checkpoint):
        result = run_estimate(bundle, method, pilots, snr, seed, indices, _estimator_settings(settings),
                              args.horizon)
        _record(registry, 'eval', {'Np': pilots, 'snr_db': snr, 'seed': seed, 'split': args.split}, result, bundle)
        results.append(result)
    write_estimate_csv(results, os.path.join(out_dir, 'eval.csv'))
    summary = {
        'initial_method': initial,
        'initial_nmse_db': results[0].aggregate_db,
        'refined_nmse_db': results[1].aggregate_db,
        'gain_db': results[0].aggregate_db - results[1].aggregate_db,
        'samples': len(results[1].rows),
    }
    _write_json(summary, os.path.join(out_dir, 'eval_summary.json'))
    logger.info(f"Refinement gain over {initial}: {summary['gain_db']:.2f} dB")
    return EXIT_OK


def cmd_train(args, settings, out_dir):
    from harness.dataset import load_bundle
    from harness.experiments import train_refiner

    bundle = load_bundle(args.bundle)
    dims = bundle.manifest['dims']
    settings.set_setting('waveform.num_taps', dims['D'])
    for key, value in bundle.manifest['array'].items():
        settings.set_setting(f'array.{key}', value)
    config = replace(settings.pinn_config(), crop_px=bundle.crop_px)
    hyper = settings.train_hyper()
    run = train_refiner(
        bundle, config, hyper,
        initial_method=settings.get_setting('harness.initial_method'),
        pilot_count=settings.get_setting('estimators.pilot_count'),
        snr_db=settings.get_setting('estimators.snr_db'),
        fractions=settings.get_setting('harness.split'),
        split_mode=settings.get_setting('harness.split_mode'),
        settings=_estimator_settings(settings),
        checkpoint_path=os.path.join(out_dir, 'model.ckpt'),
        history_path=os.path.join(out_dir, 'history.csv'),
        init_checkpoint=args.init_checkpoint,
    )
    _write_json({'best_epoch': run.result.best_epoch, 'best_val_loss': run.result.best_val_loss,
                 'kappa': run.calibration.kappa}, os.path.join(out_dir, 'train_summary.json'))
    settings.export_settings(os.path.join(out_dir, 'settings.json'))
    return EXIT_OK


def cmd_sweep(args, settings, out_dir):
    from harness.dataset import load_bundle
    from harness.experiments import SweepSpec, run_sweep

    bundle = load_bundle(args.bundle)
    spec = SweepSpec(
        axis=args.axis,
        values=tuple(args.values),
        methods=tuple(m.strip() for m in args.methods.split(',') if m.strip()),
        seeds=tuple(args.seeds if args.seeds else settings.get_setting('harness.sweep_seeds')),
        pilot_count=settings.get_setting('estimators.pilot_count'),
        snr_db=settings.get_setting('estimators.snr_db'),
    )
    run_sweep(bundle, spec, out_dir, _split(bundle, settings, args.split), _estimator_settings(settings))
    registry = _registry(args.registry)
    if registry is not None:
        from harness.dataset import bundle_hash

        registry.record_run('sweep', {'axis': spec.axis, 'values': list(spec.values), 'methods': list(spec.methods),
                                      'seeds': list(spec.seeds)}, bundle_hash=bundle_hash(bundle),
                            samples=len(bundle) if args.split == 'all' else None)
    return EXIT_OK


def cmd_plot(args, settings, out_dir):
    from harness.dataset import load_bundle
    from utils.image_utils import render_crop, render_rss_map

    bundle = load_bundle(args.bundle)
    tx = bundle.scene().tx_position_m
    ok = render_rss_map(bundle.rss_map, os.path.join(out_dir, 'rss_map.png'), markers=[tx[:2]])
    for i in range(min(args.crops, len(bundle))):
        ok = render_crop(bundle.crops[i], os.path.join(out_dir, f'crop_{i:04d}.png')) and ok
    return EXIT_OK if ok else EXIT_FAILURE


COMMANDS = {
    'gen': cmd_gen,
    'estimate': cmd_estimate,
    'eval': cmd_eval,
    'train': cmd_train,
    'sweep': cmd_sweep,
    'plot': cmd_plot,
}


def main(argv=None):
    """Run one subcommand; returns the process exit code"""
    args = build_parser().parse_args(argv)
    out_dir = args.out or os.getcwd()
    setup_logging(out_dir, args.verbose)
    try:
        settings = load_settings(args)
        logger.info(f"mbce {__version__}: {args.command}")
        return COMMANDS[args.command](args, settings, out_dir)
    except ValidationError as e:
        logger.error(f"Validation error: {e}")
        return EXIT_VALIDATION
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except MbceError as e:
        logger.error(f"Error: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Unexpected failure: {str(e)}", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
