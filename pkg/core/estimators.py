"""
Pilot-limited classical channel estimators and the NMSE metric

Observation model: pilots read the channel directly (identity pilot symbols),
antenna pilots in the delay domain, subcarrier pilots in the frequency domain.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from core.channel import ArrayConfig, WaveformConfig, steering_vector
from core.errors import (
    CountExceedsDimension, DictionaryRankDeficient, InsufficientPilots, NoiseOnlyWarning,
    ShapeMismatch, ValidationError, ZeroReference,
)

logger = logging.getLogger(__name__)

ANTENNA = 'antenna'
SUBCARRIER = 'subcarrier'

# reference power used when the channel carries no energy at all
NOISE_FLOOR_POWER = 1e-20
NMSE_FLOOR_RATIO = 1e-30
GRAM_RCOND_TOL = 1e-10


@dataclass(frozen=True)
class PilotPattern:
    """Uniformly spaced pilot positions over transmit antennas or OFDM subcarriers"""
    kind: str
    indices: Tuple[int, ...]
    count: int
    spacing: int
    dimension: int

    @property
    def index_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)


@dataclass
class PilotObservation:
    """Noisy channel samples at pilot positions

    values is [D, Nr, Np] for antenna pilots and [Nr*Nt, |S|] for subcarrier pilots.
    """
    values: np.ndarray
    noise_var: float
    pattern: PilotPattern
    num_taps: int
    nr: int
    nt: int


@dataclass(frozen=True)
class BeamspaceThreshold:
    tau: float

    @classmethod
    def from_noise(cls, noise_var: float, num_pilots: int, nt: int) -> 'BeamspaceThreshold':
        return cls(tau=3.0 * float(np.sqrt(noise_var * num_pilots / (2.0 * nt))))


def make_pilot_pattern(kind: str, dimension: int, count: int) -> PilotPattern:
    """Pilot indices i * max(1, dimension // count) for i = 0..count-1

    Args:
        kind: 'antenna' or 'subcarrier'
        dimension: Nt for antenna pilots, N_FFT for subcarrier pilots
        count: number of pilots

    Returns:
        PilotPattern
    """
    if kind not in (ANTENNA, SUBCARRIER):
        raise ValidationError(f"unknown pilot kind {kind!r}")
    if not 1 <= count <= dimension:
        raise CountExceedsDimension(f"pilot count {count} must lie in [1, {dimension}]")
    spacing = max(1, dimension // count)
    indices = tuple(int(i * spacing) for i in range(count))
    return PilotPattern(kind=kind, indices=indices, count=count, spacing=spacing, dimension=dimension)


def observe(h: np.ndarray, pattern: PilotPattern, snr_db: float, rng: np.random.Generator) -> PilotObservation:
    """Sample the channel at the pilot positions and add complex Gaussian noise

    The noise variance is the mean |.|^2 of the full sampled-domain tensor divided by
    10^(snr_db/10). snr_db = inf disables the noise.
    """
    num_taps, nr, nt = h.shape
    idx = pattern.index_array

    if pattern.kind == ANTENNA:
        if pattern.dimension != nt:
            raise ShapeMismatch(f"antenna pattern over {pattern.dimension} antennas, channel has Nt={nt}")
        domain = h
        clean = h[:, :, idx]
    else:
        if pattern.dimension < num_taps:
            raise ValidationError(f"n_fft {pattern.dimension} is smaller than D={num_taps}")
        domain = np.fft.fft(h, n=pattern.dimension, axis=0)
        clean = domain[idx].reshape(len(idx), nr * nt).T

    if np.isinf(snr_db) and snr_db > 0:
        return PilotObservation(clean.copy(), 0.0, pattern, num_taps, nr, nt)

    signal_power = float(np.mean(np.abs(domain) ** 2))
    if signal_power == 0.0:
        warnings.warn("observing an all-zero channel; noise variance taken from the absolute floor",
                      NoiseOnlyWarning, stacklevel=2)
        signal_power = NOISE_FLOOR_POWER
    noise_var = signal_power / 10.0 ** (snr_db / 10.0)
    noise = np.sqrt(noise_var / 2.0) * (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))
    return PilotObservation(clean + noise, noise_var, pattern, num_taps, nr, nt)


def _check_antenna_obs(obs: PilotObservation, arr: ArrayConfig, wf: WaveformConfig) -> None:
    if obs.pattern.kind != ANTENNA:
        raise ValidationError("this estimator needs antenna pilots")
    expected = (wf.num_taps, arr.nr, obs.pattern.count)
    if obs.values.shape != expected or obs.pattern.dimension != arr.nt:
        raise ShapeMismatch(f"observation shape {obs.values.shape} does not match {expected} with Nt={arr.nt}")


def interp_mag_phase(values: np.ndarray, xp: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Linear interpolation of magnitude and unwrapped phase along the last axis

    Outside [xp[0], xp[-1]] the edge value is held. Entries at x == xp return the
    sample itself.
    """
    mag = np.abs(values)
    phase = np.unwrap(np.angle(values), axis=-1)
    num = xp.shape[0]
    if num == 1:
        out = np.repeat(values[..., :1], x.shape[0], axis=-1)
    else:
        left = np.clip(np.searchsorted(xp, x, side='right') - 1, 0, num - 2)
        w = np.clip((x - xp[left]) / (xp[left + 1] - xp[left]), 0.0, 1.0)
        m = mag[..., left] * (1.0 - w) + mag[..., left + 1] * w
        p = phase[..., left] * (1.0 - w) + phase[..., left + 1] * w
        out = m * np.exp(1j * p)
    hits = np.searchsorted(x, xp)
    out[..., hits] = values
    return out


def ls_interp(obs: PilotObservation, arr: ArrayConfig, wf: WaveformConfig) -> np.ndarray:
    """LS at pilot antennas, magnitude/phase interpolation in between"""
    _check_antenna_obs(obs, arr, wf)
    xp = obs.pattern.index_array.astype(np.float64)
    return interp_mag_phase(obs.values, xp, np.arange(arr.nt, dtype=np.float64))


def zero_padded_ls(obs: PilotObservation, arr: ArrayConfig, wf: WaveformConfig) -> np.ndarray:
    """Pilot values in place, zeros at every other transmit antenna"""
    _check_antenna_obs(obs, arr, wf)
    h = np.zeros((wf.num_taps, arr.nr, arr.nt), dtype=np.complex128)
    h[:, :, obs.pattern.index_array] = obs.values
    return h


def ls_dft_denoise(obs: PilotObservation, arr: ArrayConfig, wf: WaveformConfig,
                   threshold: Optional[BeamspaceThreshold] = None) -> np.ndarray:
    """Zero-padded LS cleaned by hard thresholding in the beamspace (unitary DFT) domain

    Args:
        obs: antenna-pilot observation
        arr: array configuration
        wf: waveform configuration
        threshold: overrides the noise-derived threshold

    Returns:
        Estimated channel [D, Nr, Nt]
    """
    h_zp = zero_padded_ls(obs, arr, wf)
    if threshold is None:
        threshold = BeamspaceThreshold.from_noise(obs.noise_var, obs.pattern.count, arr.nt)
    beams = np.fft.fft(h_zp, axis=-1, norm='ortho')
    dropped = np.abs(beams) < threshold.tau
    if not dropped.any():
        return h_zp
    logger.debug(f"Beamspace threshold {threshold.tau:.3e} removed {int(dropped.sum())} of {dropped.size} bins")
    return h_zp - np.fft.ifft(np.where(dropped, beams, 0.0), axis=-1, norm='ortho')


def ls_ofdm(obs: PilotObservation, arr: ArrayConfig, wf: WaveformConfig, n_fft: int) -> np.ndarray:
    """Pilot-subcarrier LS, magnitude/phase interpolation across subcarriers, first D taps kept"""
    if obs.pattern.kind != SUBCARRIER:
        raise ValidationError("ls_ofdm needs subcarrier pilots")
    if n_fft < wf.num_taps or obs.pattern.dimension != n_fft:
        raise ValidationError(f"n_fft {n_fft} must be >= D={wf.num_taps} and match the pilot pattern")
    if obs.pattern.count < 2:
        raise InsufficientPilots(f"ls_ofdm needs at least 2 pilot subcarriers, got {obs.pattern.count}")
    if obs.values.shape != (arr.nr * arr.nt, obs.pattern.count):
        raise ShapeMismatch(f"observation shape {obs.values.shape} does not match Nr*Nt={arr.nr * arr.nt}")

    xp = obs.pattern.index_array.astype(np.float64)
    spectrum = interp_mag_phase(obs.values, xp, np.arange(n_fft, dtype=np.float64))
    taps = np.fft.ifft(spectrum, axis=-1)[:, :wf.num_taps]
    return taps.T.reshape(wf.num_taps, arr.nr, arr.nt)


def transmit_dictionary(arr: ArrayConfig, grid_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Oversampled transmit steering dictionary on a uniform grid over [-1, 1)

    grid_size sets the oversampling factor rho = grid_size // Nt, and rho is applied
    on each array axis with more than one element. A linear array therefore gets
    G = rho * Nt atoms (grid_size when Nt divides it), a planar array
    G = (rho * nt_x) * (rho * nt_y) = rho^2 * Nt.

    Returns:
        (atoms [Nt, G], reduced angles [G, 2])
    """
    if grid_size < arr.nt:
        raise ValidationError(f"grid_size {grid_size} must be at least Nt={arr.nt}")
    rho = max(1, grid_size // arr.nt)
    gx = rho * arr.nt_x if arr.nt_x > 1 else 1
    gy = rho * arr.nt_y if arr.nt_y > 1 else 1
    theta_x = -1.0 + 2.0 * np.arange(gx) / gx if gx > 1 else np.zeros(1)
    theta_y = -1.0 + 2.0 * np.arange(gy) / gy if gy > 1 else np.zeros(1)
    atoms = []
    angles = []
    for tx in theta_x:
        ax = steering_vector(tx, arr.nt_x)
        for ty in theta_y:
            atoms.append(np.kron(ax, steering_vector(ty, arr.nt_y)))
            angles.append((tx, ty))
    return np.stack(atoms, axis=1), np.asarray(angles)


def _stop_level(y: np.ndarray, noise_var: float) -> float:
    return max(np.sqrt(noise_var) * np.sqrt(y.size), 1e-12 * np.linalg.norm(y))


def somp_select(y: np.ndarray, atoms: np.ndarray, noise_var: float,
                max_sparsity: int) -> Tuple[List[int], np.ndarray]:
    """Greedy joint-sparse support selection for the columns of y

    Args:
        y: measurements [Np, M] (M measurement vectors sharing one support)
        atoms: dictionary restricted to the pilot rows [Np, G]
        noise_var: per-entry noise variance
        max_sparsity: atom budget

    Returns:
        (support indices in selection order, coefficients [K, M])
    """
    support: List[int] = []
    coeffs = np.zeros((0, y.shape[1]), dtype=np.complex128)
    residual = y
    stop = _stop_level(y, noise_var)
    norms = np.linalg.norm(atoms, axis=0)
    norms[norms == 0] = 1.0
    budget = min(max_sparsity, atoms.shape[0])

    while len(support) < budget and np.linalg.norm(residual) > stop:
        scores = np.linalg.norm(atoms.conj().T @ residual, axis=1) / norms
        scores[support] = -1.0
        support.append(int(np.argmax(scores)))
        sub = atoms[:, support]
        gram = sub.conj().T @ sub
        if 1.0 / np.linalg.cond(gram) < GRAM_RCOND_TOL:
            raise DictionaryRankDeficient(f"selected atoms {support} are numerically collinear")
        coeffs = linalg.lstsq(sub, y)[0]
        residual = y - sub @ coeffs
    return support, coeffs


def _check_grid(obs: PilotObservation, arr: ArrayConfig, wf: WaveformConfig, grid_size: Optional[int]):
    _check_antenna_obs(obs, arr, wf)
    atoms, _ = transmit_dictionary(arr, grid_size if grid_size is not None else 4 * arr.nt)
    return atoms, atoms[obs.pattern.index_array]


def somp(obs: PilotObservation, arr: ArrayConfig, wf: WaveformConfig,
         grid_size: Optional[int] = None, max_sparsity: int = 8) -> np.ndarray:
    """Simultaneous OMP per tap, joint across the receive antennas"""
    atoms, pilot_atoms = _check_grid(obs, arr, wf, grid_size)
    h = np.zeros((wf.num_taps, arr.nr, arr.nt), dtype=np.complex128)
    for d in range(wf.num_taps):
        support, coeffs = somp_select(obs.values[d].T, pilot_atoms, obs.noise_var, max_sparsity)
        if support:
            h[d] = (atoms[:, support] @ coeffs).T
    return h


def omp(obs: PilotObservation, arr: ArrayConfig, wf: WaveformConfig,
        grid_size: Optional[int] = None, max_sparsity: int = 8) -> np.ndarray:
    """Single-vector OMP for every (tap, receive antenna) row"""
    atoms, pilot_atoms = _check_grid(obs, arr, wf, grid_size)
    h = np.zeros((wf.num_taps, arr.nr, arr.nt), dtype=np.complex128)
    for d in range(wf.num_taps):
        for r in range(arr.nr):
            support, coeffs = somp_select(obs.values[d, r][:, None], pilot_atoms, obs.noise_var, max_sparsity)
            if support:
                h[d, r] = atoms[:, support] @ coeffs[:, 0]
    return h


def _top_distinct(scores: np.ndarray, k: int, unit_atoms: np.ndarray, taken: Sequence[int]) -> List[int]:
    """Highest-scoring atoms, skipping any that are collinear on the pilot rows with one already taken"""
    chosen: List[int] = []
    kept = list(taken)
    for g in np.argsort(-scores, kind='stable'):
        if len(chosen) == k:
            break
        g = int(g)
        if g in kept:
            continue
        if kept and np.max(np.abs(unit_atoms[:, kept].conj().T @ unit_atoms[:, g])) > 1.0 - 1e-8:
            continue
        chosen.append(g)
        kept.append(g)
    return chosen


def subspace_pursuit_select(y: np.ndarray, atoms: np.ndarray, noise_var: float, sparsity: int,
                            max_iter: int = 20) -> Tuple[List[int], np.ndarray]:
    """Subspace pursuit: expand to 2K candidates, prune back to K, repeat while the residual shrinks"""
    if np.linalg.norm(y) <= _stop_level(y, noise_var):
        return [], np.zeros((0, y.shape[1]), dtype=np.complex128)
    k = max(1, min(sparsity, atoms.shape[0] // 2))
    unit = atoms / np.linalg.norm(atoms, axis=0)

    def fit(support):
        coeffs = linalg.lstsq(atoms[:, support], y)[0]
        return coeffs, y - atoms[:, support] @ coeffs

    support = _top_distinct(np.linalg.norm(unit.conj().T @ y, axis=1), k, unit, [])
    coeffs, residual = fit(support)
    for _ in range(max_iter):
        extra = _top_distinct(np.linalg.norm(unit.conj().T @ residual, axis=1), k, unit, support)
        candidates = support + extra
        wide = linalg.lstsq(atoms[:, candidates], y)[0]
        keep = np.argsort(-np.linalg.norm(wide, axis=1), kind='stable')[:k]
        new_support = [candidates[i] for i in sorted(keep)]
        new_coeffs, new_residual = fit(new_support)
        if np.linalg.norm(new_residual) >= np.linalg.norm(residual) - 1e-12 * np.linalg.norm(y):
            break
        support, coeffs, residual = new_support, new_coeffs, new_residual
    return support, coeffs


def subspace_pursuit(obs: PilotObservation, arr: ArrayConfig, wf: WaveformConfig,
                     grid_size: Optional[int] = None, max_sparsity: int = 8) -> np.ndarray:
    """Joint subspace pursuit per tap over the oversampled transmit dictionary"""
    atoms, pilot_atoms = _check_grid(obs, arr, wf, grid_size)
    h = np.zeros((wf.num_taps, arr.nr, arr.nt), dtype=np.complex128)
    for d in range(wf.num_taps):
        support, coeffs = subspace_pursuit_select(obs.values[d].T, pilot_atoms, obs.noise_var, max_sparsity)
        if support:
            h[d] = (atoms[:, support] @ coeffs).T
    return h


def nmse_ratio(estimate: np.ndarray, truth: np.ndarray) -> float:
    if estimate.shape != truth.shape:
        raise ShapeMismatch(f"estimate shape {estimate.shape} != truth shape {truth.shape}")
    ref = float(np.sum(np.abs(truth) ** 2))
    if ref == 0.0:
        raise ZeroReference("NMSE is undefined for an all-zero reference channel")
    return float(np.sum(np.abs(estimate - truth) ** 2)) / ref


def nmse_db(estimate: np.ndarray, truth: np.ndarray) -> float:
    """10*log10(||estimate - truth||^2 / ||truth||^2), floored at -300 dB"""
    return float(10.0 * np.log10(max(nmse_ratio(estimate, truth), NMSE_FLOOR_RATIO)))


def nmse_db_dataset(estimates: Sequence[np.ndarray], truths: Sequence[np.ndarray]) -> float:
    """Mean of the linear per-sample ratios, then converted to dB"""
    if len(estimates) != len(truths) or not truths:
        raise ShapeMismatch("need the same non-zero number of estimates and references")
    ratios = [nmse_ratio(e, t) for e, t in zip(estimates, truths)]
    return float(10.0 * np.log10(max(float(np.mean(ratios)), NMSE_FLOOR_RATIO)))
