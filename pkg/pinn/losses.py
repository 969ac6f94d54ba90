"""
Reconstruction and power-conservation losses
"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np

from autodiff import functional as F
from autodiff.tensor import Tensor
from core.errors import NonPositiveInput, ShapeMismatch, ZeroReference

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerCalibration:
    """Dataset constants linking normalized network outputs to physical powers

    kappa: least-squares ratio of RSS power to channel power over the training set
    channel_scale: c_h, channels are divided by it before entering the network
    power_scale: c_p, RSS powers are divided by it inside the physics term
    tx_power_w: P_T
    """
    kappa: float
    channel_scale: float
    power_scale: float
    tx_power_w: float

    def __post_init__(self):
        for name in ('kappa', 'channel_scale', 'power_scale', 'tx_power_w'):
            if not getattr(self, name) > 0:
                raise NonPositiveInput(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def planes_to_rss(self) -> float:
        """Factor turning sum(pred^2) of normalized planes into normalized RSS power"""
        return self.kappa * self.tx_power_w * self.channel_scale ** 2 / self.power_scale


def calibrate_kappa(p_em: np.ndarray, p_chan: np.ndarray) -> float:
    """Least-squares kappa minimizing sum (P_EM - kappa * P_Chan)^2"""
    p_em = np.asarray(p_em, dtype=np.float64)
    p_chan = np.asarray(p_chan, dtype=np.float64)
    denom = float(np.sum(p_chan ** 2))
    if denom == 0.0:
        raise ZeroReference("all channel powers are zero; kappa is undefined")
    kappa = float(np.sum(p_em * p_chan)) / denom
    if kappa <= 0:
        raise NonPositiveInput(f"calibrated kappa {kappa} is not positive")
    return kappa


def power_consistency_report(p_em: np.ndarray, p_chan: np.ndarray, kappa: float) -> Dict[str, object]:
    """Per-sample |P_EM - kappa * P_Chan| / P_EM and summary percentiles"""
    p_em = np.asarray(p_em, dtype=np.float64)
    p_chan = np.asarray(p_chan, dtype=np.float64)
    valid = p_em > 0
    rel = np.abs(p_em[valid] - kappa * p_chan[valid]) / p_em[valid]
    return {
        'kappa': kappa,
        'relative_errors': rel,
        'median': float(np.median(rel)) if rel.size else float('nan'),
        'p90': float(np.percentile(rel, 90)) if rel.size else float('nan'),
        'samples': int(rel.size),
    }


def loss_total(pred: Tensor, truth: np.ndarray, rss_power_w: np.ndarray, calibration: PowerCalibration,
               zeta: float) -> Tensor:
    """Mean over samples and snapshots of NMSE + zeta * (P_EM/c_p - kappa * P_Chan/c_p)^2

    Args:
        pred: predicted snapshots in normalized planes [N, L, 2D, Nr, Nt]
        truth: true snapshots in the same units
        rss_power_w: RSS power in watts per sample and snapshot [N, L]
        calibration: dataset constants
        zeta: weight of the physics term

    Returns:
        Scalar loss tensor
    """
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 5:
        raise ShapeMismatch(f"prediction {pred.shape} and truth {truth.shape} must match as [N, L, 2D, Nr, Nt]")
    rss = np.asarray(rss_power_w, dtype=np.float64).reshape(pred.shape[:2])
    axes = (2, 3, 4)
    reference = np.sum(truth ** 2, axis=axes)
    if np.any(reference == 0):
        raise ZeroReference("a target snapshot has zero energy")

    nmse = F.mul(F.sum(F.square(F.sub(pred, Tensor(truth))), axis=axes), Tensor(1.0 / reference))
    if zeta == 0:
        return F.mean(nmse)
    chan = F.scale(F.sum(F.square(pred), axis=axes), calibration.planes_to_rss)
    phys = F.square(F.sub(Tensor(rss / calibration.power_scale), chan))
    return F.mean(F.add(nmse, F.scale(phys, zeta)))
