"""
Estimator dispatch, per-sample NMSE evaluation, refinement training and parameter sweeps
"""

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff.checkpoint import load_checkpoint, save_checkpoint
from core.channel import ArrayConfig, WaveformConfig
from core.errors import CheckpointShapeMismatch, UnknownMethod, ValidationError
from core.estimators import (
    ANTENNA, SUBCARRIER, ls_dft_denoise, ls_interp, ls_ofdm, make_pilot_pattern, nmse_ratio, observe, omp, somp,
    subspace_pursuit,
)
from harness import svg_plot
from harness.dataset import DatasetBundle, channel_powers, rss_power, snapshot_windows, split_indices
from pinn.config import PinnConfig, TrainHyper
from pinn.losses import PowerCalibration, calibrate_kappa, power_consistency_report
from pinn.model import PinnModel
from pinn.trainer import RefinementData, TrainResult, infer, train

logger = logging.getLogger(__name__)

CLASSICAL_METHODS = ('ls-interp', 'ls-dft', 'ls-ofdm', 'somp', 'omp', 'sp')
PINN_PREFIX = 'pinn:'
SWEEP_AXES = ('snr_db', 'pilot_count', 'pilot_density', 'horizon_L')
ESTIMATE_COLUMNS = ('sample_id', 'method', 'Np', 'snr_db', 'nmse_db', 'nmse_ratio')
SWEEP_COLUMNS = ('axis', 'value', 'method', 'seed', 'Np', 'snr_db', 'samples', 'nmse_db', 'mean_of_db')


def worker_count() -> int:
    """Process count for sweeps from MBCE_THREADS (default 1)"""
    try:
        return max(1, int(os.environ.get('MBCE_THREADS', '1')))
    except ValueError:
        logger.warning("MBCE_THREADS is not an integer; using 1")
        return 1


@dataclass(frozen=True)
class EstimatorSettings:
    n_fft: int = 64
    grid_factor: int = 4
    max_sparsity: int = 8


def _check_method(method: str) -> None:
    if method in CLASSICAL_METHODS:
        return
    if method.startswith(PINN_PREFIX) and len(method) > len(PINN_PREFIX):
        return
    raise UnknownMethod(f"unknown method {method!r}; expected one of {CLASSICAL_METHODS} or pinn:<checkpoint>")


def pilot_dimension(method: str, arr: ArrayConfig, settings: EstimatorSettings) -> int:
    return settings.n_fft if method == 'ls-ofdm' else arr.nt


def classical_estimate(method: str, h: np.ndarray, arr: ArrayConfig, wf: WaveformConfig, pilot_count: int,
                       snr_db: float, rng: np.random.Generator, settings: EstimatorSettings) -> np.ndarray:
    """Observe the channel at the method's pilots and run the estimator"""
    if method == 'ls-ofdm':
        obs = observe(h, make_pilot_pattern(SUBCARRIER, settings.n_fft, pilot_count), snr_db, rng)
        return ls_ofdm(obs, arr, wf, settings.n_fft)
    obs = observe(h, make_pilot_pattern(ANTENNA, arr.nt, pilot_count), snr_db, rng)
    if method == 'ls-interp':
        return ls_interp(obs, arr, wf)
    if method == 'ls-dft':
        return ls_dft_denoise(obs, arr, wf)
    grid = settings.grid_factor * arr.nt
    if method == 'somp':
        return somp(obs, arr, wf, grid, settings.max_sparsity)
    if method == 'omp':
        return omp(obs, arr, wf, grid, settings.max_sparsity)
    if method == 'sp':
        return subspace_pursuit(obs, arr, wf, grid, settings.max_sparsity)
    raise UnknownMethod(f"{method!r} is not a classical estimator")


def sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    """Noise stream of one sample; shared by every method so comparisons are paired"""
    return np.random.default_rng([int(seed), int(sample_id)])


def initial_estimates(bundle: DatasetBundle, indices: Sequence[int], method: str, pilot_count: int,
                      snr_db: float, seed: int, settings: EstimatorSettings) -> np.ndarray:
    arr, wf = bundle.array_config(), bundle.waveform_config()
    if len(indices) == 0:
        return np.zeros((0,) + bundle.channels.shape[1:], dtype=np.complex128)
    return np.stack([classical_estimate(method, bundle.channels[i], arr, wf, pilot_count, snr_db,
                                        sample_rng(seed, i), settings) for i in indices])


@dataclass
class RefinerCheckpoint:
    """A trained network together with everything needed to feed it"""
    model: PinnModel
    calibration: PowerCalibration
    initial_method: str
    rss_source: str


def save_refiner(filename: str, model: PinnModel, calibration: PowerCalibration, initial_method: str,
                 rss_source: str, extra: Optional[Dict] = None) -> None:
    metadata = {
        'config': model.config.to_dict(),
        'calibration': {'kappa': calibration.kappa, 'channel_scale': calibration.channel_scale,
                        'power_scale': calibration.power_scale, 'tx_power_w': calibration.tx_power_w},
        'initial_method': initial_method,
        'rss_source': rss_source,
    }
    metadata.update(extra or {})
    save_checkpoint(filename, model.params, metadata)


def load_refiner(filename: str) -> RefinerCheckpoint:
    arrays, metadata = load_checkpoint(filename)
    try:
        config = PinnConfig.from_dict(metadata['config'])
        calibration = PowerCalibration(**metadata['calibration'])
        initial_method = metadata['initial_method']
    except KeyError as e:
        raise CheckpointShapeMismatch(f"checkpoint {filename} lacks refinement metadata: {e}") from e
    return RefinerCheckpoint(PinnModel(config, params=arrays), calibration, initial_method,
                             metadata.get('rss_source', 'center'))


def _check_refiner_fits(refiner: RefinerCheckpoint, bundle: DatasetBundle) -> None:
    cfg = refiner.model.config
    dims = bundle.manifest['dims']
    if (cfg.d_taps, cfg.nr, cfg.nt, cfg.crop_px) != (dims['D'], dims['Nr'], dims['Nt'], dims['crop_px']):
        raise CheckpointShapeMismatch(
            f"network expects D={cfg.d_taps}, Nr={cfg.nr}, Nt={cfg.nt}, crop {cfg.crop_px} px; bundle has "
            f"D={dims['D']}, Nr={dims['Nr']}, Nt={dims['Nt']}, crop {dims['crop_px']} px")


def estimate_snapshots(bundle: DatasetBundle, indices: np.ndarray, method: str, pilot_count: int, snr_db: float,
                       seed: int, settings: EstimatorSettings, horizon: int = 1) -> np.ndarray:
    """Estimates [M, horizon, D, Nr, Nt] for the given anchors

    Classical methods hold the current estimate for every future step.
    """
    _check_method(method)
    if method.startswith(PINN_PREFIX):
        refiner = load_refiner(method[len(PINN_PREFIX):])
        _check_refiner_fits(refiner, bundle)
        if horizon > refiner.model.config.multi_step_L:
            raise ValidationError(f"network predicts {refiner.model.config.multi_step_L} steps, "
                                  f"{horizon} requested")
        h_init = initial_estimates(bundle, indices, refiner.initial_method, pilot_count, snr_db, seed, settings)
        refined = infer(refiner.model, h_init, bundle.crops[indices], refiner.calibration)
        return refined[:, :horizon]
    held = initial_estimates(bundle, indices, method, pilot_count, snr_db, seed, settings)
    return np.repeat(held[:, None], horizon, axis=1)


@dataclass
class EstimateResult:
    method: str
    pilot_count: int
    snr_db: float
    rows: List[Dict] = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([row['nmse_ratio'] for row in self.rows])

    @property
    def aggregate_db(self) -> float:
        """dB of the mean linear ratio"""
        return float(10.0 * np.log10(max(float(np.mean(self.ratios)), 1e-30)))

    @property
    def mean_of_db(self) -> float:
        return float(np.mean([row['nmse_db'] for row in self.rows]))


def run_estimate(bundle: DatasetBundle, method: str, pilot_count: int, snr_db: float, seed: int = 0,
                 indices: Optional[Sequence[int]] = None, settings: EstimatorSettings = EstimatorSettings(),
                 step: int = 1) -> EstimateResult:
    """Per-sample NMSE of one method

    Args:
        bundle: dataset
        method: ls-interp, ls-dft, ls-ofdm, somp, omp, sp or pinn:<checkpoint>
        pilot_count: pilots per observation
        snr_db: pilot SNR
        seed: master seed of the observation noise
        indices: samples to evaluate (all by default)
        settings: estimator parameters
        step: compare against the snapshot step-1 samples ahead on the trajectory

    Returns:
        EstimateResult
    """
    _check_method(method)
    indices = np.arange(len(bundle)) if indices is None else np.asarray(indices, dtype=np.int64)
    anchors, windows = snapshot_windows(bundle, indices, step)
    if anchors.size == 0:
        raise ValidationError(f"no samples have {step - 1} future steps on their trajectory")
    estimates = estimate_snapshots(bundle, anchors, method, pilot_count, snr_db, seed, settings, step)

    result = EstimateResult(method=method, pilot_count=pilot_count, snr_db=snr_db)
    for k, anchor in enumerate(anchors):
        ratio = nmse_ratio(estimates[k, step - 1], bundle.channels[windows[k, step - 1]])
        result.rows.append({
            'sample_id': int(anchor),
            'method': method,
            'Np': pilot_count,
            'snr_db': snr_db,
            'nmse_db': float(10.0 * np.log10(max(ratio, 1e-30))),
            'nmse_ratio': ratio,
        })
    logger.info(f"{method}: Np={pilot_count}, SNR {snr_db} dB, {len(result.rows)} samples, "
                f"aggregate NMSE {result.aggregate_db:.2f} dB")
    return result


def write_estimate_csv(results: Sequence[EstimateResult], filename: str) -> None:
    with open(filename, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(ESTIMATE_COLUMNS)
        for result in results:
            for row in result.rows:
                writer.writerow([row['sample_id'], row['method'], row['Np'], _fmt(row['snr_db']),
                                 _fmt(row['nmse_db']), repr(row['nmse_ratio'])])
    logger.info(f"Per-sample NMSE written to {filename}")


def _fmt(value: float) -> str:
    return f"{value:.6f}"


# -- refinement training ------------------------------------------------------

def calibrate_bundle(bundle: DatasetBundle, train_indices: Sequence[int]) -> PowerCalibration:
    """kappa from true RSS against channel power over the training samples; scales from the manifest"""
    p_em = bundle.rss_true_w[np.asarray(train_indices, dtype=np.int64)]
    p_chan = channel_powers(bundle, train_indices)
    kappa = calibrate_kappa(p_em, p_chan)
    report = power_consistency_report(p_em, p_chan, kappa)
    logger.info(f"kappa {kappa:.4e}; power consistency median {report['median']:.3f}, "
                f"90th percentile {report['p90']:.3f}")
    return PowerCalibration(kappa=kappa, channel_scale=bundle.channel_scale, power_scale=bundle.power_scale,
                            tx_power_w=bundle.waveform_config().tx_power_w)


def build_refinement_data(bundle: DatasetBundle, indices: Sequence[int], initial_method: str, pilot_count: int,
                          snr_db: float, seed: int, horizon: int, rss_source: str,
                          settings: EstimatorSettings) -> RefinementData:
    anchors, windows = snapshot_windows(bundle, indices, horizon)
    h_init = initial_estimates(bundle, anchors, initial_method, pilot_count, snr_db, seed, settings)
    return RefinementData(
        h_init=h_init,
        h_true=bundle.channels[windows],
        crops=bundle.crops[anchors],
        rss_power_w=rss_power(bundle, windows, rss_source),
    )


@dataclass
class TrainingRun:
    result: TrainResult
    calibration: PowerCalibration
    splits: Tuple[np.ndarray, np.ndarray, np.ndarray]


def train_refiner(bundle: DatasetBundle, config: PinnConfig, hyper: TrainHyper, initial_method: str = 'ls-ofdm',
                  pilot_count: int = 4, snr_db: float = 0.0, fractions=(0.8, 0.1, 0.1), split_mode: str = 'random',
                  settings: EstimatorSettings = EstimatorSettings(), checkpoint_path: Optional[str] = None,
                  history_path: Optional[str] = None, init_checkpoint: Optional[str] = None) -> TrainingRun:
    """Split the bundle, calibrate kappa, build refinement pairs from the initial estimator and train"""
    if initial_method not in CLASSICAL_METHODS:
        raise UnknownMethod(f"initial estimator must be classical, got {initial_method!r}")
    train_idx, val_idx, test_idx = split_indices(bundle, fractions, split_mode, hyper.seed)
    calibration = calibrate_bundle(bundle, train_idx)
    horizon = config.multi_step_L
    train_data = build_refinement_data(bundle, train_idx, initial_method, pilot_count, snr_db, hyper.seed,
                                       horizon, hyper.rss_source, settings)
    val_data = build_refinement_data(bundle, val_idx, initial_method, pilot_count, snr_db, hyper.seed,
                                     horizon, hyper.rss_source, settings)

    init_params = None
    if init_checkpoint:
        init_params, _ = load_checkpoint(init_checkpoint)
        logger.info(f"Fine-tuning from {init_checkpoint}")
    result = train(train_data, val_data, config, hyper, calibration, init_params=init_params,
                   history_path=history_path)
    if checkpoint_path:
        save_refiner(checkpoint_path, result.model, calibration, initial_method, hyper.rss_source,
                     {'pilot_count': pilot_count, 'snr_db': snr_db, 'best_epoch': result.best_epoch})
    return TrainingRun(result=result, calibration=calibration, splits=(train_idx, val_idx, test_idx))


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: Tuple[float, ...]
    methods: Tuple[str, ...]
    seeds: Tuple[int, ...] = (0,)
    pilot_count: int = 16
    snr_db: float = 10.0

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValidationError(f"sweep axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if not self.values or not self.methods or not self.seeds:
            raise ValidationError("sweep values, methods and seeds must be non-empty")
        if self.axis == 'pilot_density' and any(not 0.0 < v <= 1.0 for v in self.values):
            raise ValidationError("pilot densities must lie in (0, 1]")
        if self.axis in ('pilot_count', 'horizon_L') and any(int(v) != v or v < 1 for v in self.values):
            raise ValidationError(f"{self.axis} values must be positive integers")
        for method in self.methods:
            _check_method(method)


def _cell_settings(spec: SweepSpec, value: float, method: str, bundle: DatasetBundle,
                   settings: EstimatorSettings) -> Tuple[int, float, int]:
    """(pilot count, snr, step) of one sweep cell"""
    pilots, snr, step = spec.pilot_count, spec.snr_db, 1
    if spec.axis == 'snr_db':
        snr = float(value)
    elif spec.axis == 'pilot_count':
        pilots = int(value)
    elif spec.axis == 'pilot_density':
        base = method
        if method.startswith(PINN_PREFIX):
            base = load_refiner(method[len(PINN_PREFIX):]).initial_method
        pilots = max(1, int(round(value * pilot_dimension(base, bundle.array_config(), settings))))
    else:
        step = int(value)
    return pilots, snr, step


def _run_cell(args) -> Dict:
    bundle, spec, value, method, seed, indices, settings = args
    pilots, snr, step = _cell_settings(spec, value, method, bundle, settings)
    result = run_estimate(bundle, method, pilots, snr, seed, indices, settings, step)
    return {
        'axis': spec.axis, 'value': value, 'method': method, 'seed': seed, 'Np': pilots, 'snr_db': snr,
        'samples': len(result.rows), 'nmse_db': result.aggregate_db, 'mean_of_db': result.mean_of_db,
        'mean_ratio': float(np.mean(result.ratios)),
    }


@dataclass
class SweepResult:
    rows: List[Dict]
    csv_path: Optional[str] = None
    svg_path: Optional[str] = None

    def curve(self, method: str) -> List[Tuple[float, float]]:
        """(axis value, dB of the seed-averaged linear NMSE) per axis value"""
        points = []
        for value in sorted({row['value'] for row in self.rows if row['method'] == method}):
            ratios = [row['mean_ratio'] for row in self.rows if row['method'] == method and row['value'] == value]
            points.append((value, float(10.0 * np.log10(max(float(np.mean(ratios)), 1e-30)))))
        return points


def run_sweep(bundle: DatasetBundle, spec: SweepSpec, out_dir: Optional[str] = None,
              indices: Optional[Sequence[int]] = None, settings: EstimatorSettings = EstimatorSettings(),
              workers: Optional[int] = None) -> SweepResult:
    """Evaluate every (axis value, method, seed) cell; write a long-format CSV and an SVG line chart

    Args:
        bundle: dataset
        spec: sweep description
        out_dir: directory for sweep_<axis>.csv and sweep_<axis>.svg (nothing written when None)
        indices: samples to evaluate
        settings: estimator parameters
        workers: process count (MBCE_THREADS by default); rows keep cell order either way

    Returns:
        SweepResult
    """
    indices = None if indices is None else np.asarray(indices, dtype=np.int64)
    cells = [(bundle, spec, value, method, seed, indices, settings)
             for value in spec.values for method in spec.methods for seed in spec.seeds]
    workers = worker_count() if workers is None else workers
    logger.info(f"Sweep over {spec.axis}: {len(cells)} cells on {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(cell) for cell in cells]

    result = SweepResult(rows=rows)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        result.csv_path = os.path.join(out_dir, f"sweep_{spec.axis}.csv")
        write_sweep_csv(rows, result.csv_path)
        result.svg_path = os.path.join(out_dir, f"sweep_{spec.axis}.svg")
        series = {_label(method): result.curve(method) for method in spec.methods}
        svg_plot.save_line_chart(series, result.svg_path, title=f"NMSE vs. {spec.axis}",
                                 x_label=spec.axis, y_label='NMSE (dB)')
    return result


def _label(method: str) -> str:
    if method.startswith(PINN_PREFIX):
        return 'pinn:' + os.path.splitext(os.path.basename(method[len(PINN_PREFIX):]))[0]
    return method


def write_sweep_csv(rows: Sequence[Dict], filename: str) -> None:
    with open(filename, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([row['axis'], _fmt(row['value']), row['method'], row['seed'], row['Np'],
                             _fmt(row['snr_db']), row['samples'], _fmt(row['nmse_db']), _fmt(row['mean_of_db'])])
    logger.info(f"Sweep table written to {filename}")
