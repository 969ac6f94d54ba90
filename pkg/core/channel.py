"""
Wideband URA-to-URA MIMO channel synthesis from multipath parameters
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy import constants

from core.errors import ConfigurationError, NonPositivePower, PathDelayOutOfRange, ValidationError

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = constants.speed_of_light
# intrinsic impedance of free space, ~376.730 ohm
ETA_0 = float(np.sqrt(constants.mu_0 / constants.epsilon_0))
# raised-cosine tails allowed on either side of the tap window, in samples
DELAY_MARGIN_SAMPLES = 4


@dataclass(frozen=True)
class ArrayConfig:
    """Transmit and receive uniform rectangular arrays (half-wavelength spacing)"""
    nt_x: int
    nt_y: int
    nr_x: int
    nr_y: int

    def __post_init__(self):
        for name in ('nt_x', 'nt_y', 'nr_x', 'nr_y'):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")

    @property
    def nt(self) -> int:
        return self.nt_x * self.nt_y

    @property
    def nr(self) -> int:
        return self.nr_x * self.nr_y


@dataclass(frozen=True)
class WaveformConfig:
    """Sampling, pulse shaping and carrier parameters of the link"""
    sample_interval_s: float
    num_taps: int
    carrier_hz: float
    tx_power_w: float
    rolloff: float = 0.4
    clock_offset_s: float = 0.0

    def __post_init__(self):
        if self.sample_interval_s <= 0:
            raise ConfigurationError("sample_interval_s must be positive")
        if self.num_taps < 1:
            raise ConfigurationError("num_taps must be at least 1")
        if self.carrier_hz <= 0:
            raise ConfigurationError("carrier_hz must be positive")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ConfigurationError("rolloff must lie in [0, 1]")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def bandwidth_hz(self) -> float:
        return 1.0 / self.sample_interval_s

    def with_clock_offset(self, clock_offset_s: float) -> 'WaveformConfig':
        return WaveformConfig(
            sample_interval_s=self.sample_interval_s,
            num_taps=self.num_taps,
            carrier_hz=self.carrier_hz,
            tx_power_w=self.tx_power_w,
            rolloff=self.rolloff,
            clock_offset_s=clock_offset_s,
        )


@dataclass(frozen=True)
class Path:
    """One multipath component: complex gain, delay and departure/arrival angles (radians)"""
    gain: complex
    delay_s: float
    aoa_az: float = 0.0
    aoa_el: float = 0.0
    aod_az: float = 0.0
    aod_el: float = 0.0

    def with_gain(self, gain: complex) -> 'Path':
        return Path(gain, self.delay_s, self.aoa_az, self.aoa_el, self.aod_az, self.aod_el)


PathSet = List[Path]


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts):
    return 10.0 * np.log10(watts) + 30.0


def steering_vector(theta: float, n: int) -> np.ndarray:
    """Half-wavelength ULA response, entry k equal to exp(-j*pi*k*theta) for k = 0..n-1"""
    k = np.arange(n)
    return np.exp(-1j * np.pi * k * theta)


def array_response(az: float, el: float, nx: int, ny: int) -> np.ndarray:
    """URA response a(cos(el)sin(az)) kron a(sin(el)), length nx*ny"""
    theta_par = np.cos(el) * np.sin(az)
    theta_perp = np.sin(el)
    return np.kron(steering_vector(theta_par, nx), steering_vector(theta_perp, ny))


def raised_cosine(t, rolloff: float, ts: float):
    """Raised-cosine impulse response sampled at time(s) t

    Args:
        t: time in seconds, scalar or array
        rolloff: roll-off factor beta in [0, 1]
        ts: symbol interval in seconds

    Returns:
        Pulse value(s), 1 at t = 0 and 0 at nonzero multiples of ts
    """
    x = np.asarray(t, dtype=np.float64) / ts
    base = np.sinc(x)
    if rolloff == 0:
        out = base
    else:
        denom = 1.0 - (2.0 * rolloff * x) ** 2
        singular = np.abs(denom) < 1e-10
        safe = np.where(singular, 1.0, denom)
        out = np.where(
            singular,
            np.pi / 4.0 * np.sinc(1.0 / (2.0 * rolloff)),
            base * np.cos(np.pi * rolloff * x) / safe,
        )
    if np.ndim(out) == 0:
        return float(out)
    return out


def _check_delays(paths: Sequence[Path], wf: WaveformConfig) -> np.ndarray:
    shifted = np.array([p.delay_s for p in paths], dtype=np.float64) - wf.clock_offset_s
    margin = DELAY_MARGIN_SAMPLES * wf.sample_interval_s
    upper = wf.num_taps * wf.sample_interval_s + margin
    bad = np.flatnonzero((shifted < -margin) | (shifted >= upper))
    if bad.size:
        i = int(bad[0])
        raise PathDelayOutOfRange(
            f"path {i} has shifted delay {shifted[i]:.3e} s outside [{-margin:.3e}, {upper:.3e}) s; "
            f"check clock_offset_s ({wf.clock_offset_s:.3e} s)"
        )
    return shifted


def synthesize_channel(paths: Sequence[Path], arr: ArrayConfig, wf: WaveformConfig) -> np.ndarray:
    """Build the tap-domain channel H[d] = sum_l a_l p(d*Ts - tau_l) a_r a_t^T

    Returns:
        Complex array of shape [D, Nr, Nt]
    """
    h = np.zeros((wf.num_taps, arr.nr, arr.nt), dtype=np.complex128)
    if not paths:
        return h

    shifted = _check_delays(paths, wf)
    gains = np.array([p.gain for p in paths], dtype=np.complex128)
    taps = np.arange(wf.num_taps) * wf.sample_interval_s
    pulses = raised_cosine(taps[:, None] - shifted[None, :], wf.rolloff, wf.sample_interval_s)
    pulses = np.atleast_2d(pulses)
    a_r = np.stack([array_response(p.aoa_az, p.aoa_el, arr.nr_x, arr.nr_y) for p in paths])
    a_t = np.stack([array_response(p.aod_az, p.aod_el, arr.nt_x, arr.nt_y) for p in paths])

    h += np.einsum('l,dl,lr,lt->drt', gains, pulses, a_r, a_t)
    logger.debug(f"Synthesized channel from {len(paths)} paths, shape {h.shape}")
    return h


def channel_power(h: np.ndarray, tx_power_w: float) -> float:
    """P_T times the summed squared Frobenius norm over taps"""
    return float(tx_power_w * np.sum(np.abs(h) ** 2))


def gain_from_field(field_mag: float, tx_power_w: float, phase: float) -> complex:
    """Complex path gain (sqrt(eta0)/2) * |E| / sqrt(P_T) * exp(j*phase)"""
    if tx_power_w <= 0:
        raise NonPositivePower(f"tx_power_w must be positive, got {tx_power_w}")
    if field_mag < 0:
        raise ValidationError(f"field magnitude must be non-negative, got {field_mag}")
    magnitude = np.sqrt(ETA_0) / 2.0 * field_mag / np.sqrt(tx_power_w)
    return complex(magnitude * np.exp(1j * phase))


def field_from_gain(gain: complex, tx_power_w: float) -> complex:
    """Inverse of gain_from_field: the complex field phasor carried by a path gain"""
    if tx_power_w <= 0:
        raise NonPositivePower(f"tx_power_w must be positive, got {tx_power_w}")
    return complex(2.0 * np.sqrt(tx_power_w) / np.sqrt(ETA_0) * gain)
