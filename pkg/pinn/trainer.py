"""
Training loop and inference for the refinement network
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np

from autodiff.tensor import Tape, Tensor, backward, no_grad
from core.errors import EmptyDataset, NonFiniteLoss, ShapeMismatch
from pinn.config import PinnConfig, TrainHyper
from pinn.losses import PowerCalibration, loss_total
from pinn.model import PinnModel
from pinn.optim import Adam, StepLR

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ('epoch', 'train_loss', 'val_loss', 'lr')


def channel_to_planes(h: np.ndarray) -> np.ndarray:
    """Complex [..., D, Nr, Nt] to real [..., 2D, Nr, Nt] (real parts first)"""
    return np.concatenate([h.real, h.imag], axis=-3).astype(np.float64)


def planes_to_channel(planes: np.ndarray) -> np.ndarray:
    d = planes.shape[-3] // 2
    return planes[..., :d, :, :] + 1j * planes[..., d:, :, :]


@dataclass
class RefinementData:
    """Network inputs and targets for a set of samples

    h_init: complex [N, D, Nr, Nt]; h_true: complex [N, L, D, Nr, Nt];
    crops: [N, c, c] in [0, 1]; rss_power_w: [N, L]
    """
    h_init: np.ndarray
    h_true: np.ndarray
    crops: np.ndarray
    rss_power_w: np.ndarray

    def __post_init__(self):
        n = self.h_init.shape[0]
        if self.h_true.ndim == 4:
            self.h_true = self.h_true[:, None]
        if not (self.h_true.shape[0] == self.crops.shape[0] == n):
            raise ShapeMismatch("refinement arrays disagree on the number of samples")
        rss = np.asarray(self.rss_power_w, dtype=np.float64)
        if rss.size != n * self.h_true.shape[1]:
            raise ShapeMismatch(f"expected {n} x {self.h_true.shape[1]} RSS powers, got {rss.shape}")
        self.rss_power_w = rss.reshape(self.h_true.shape[:2])
        if self.h_true.shape[2:] != self.h_init.shape[1:]:
            raise ShapeMismatch(f"targets {self.h_true.shape} do not match initial estimates {self.h_init.shape}")

    def __len__(self):
        return self.h_init.shape[0]

    def subset(self, index) -> 'RefinementData':
        index = np.asarray(index, dtype=np.int64)
        return RefinementData(self.h_init[index], self.h_true[index], self.crops[index], self.rss_power_w[index])


@dataclass
class TrainResult:
    model: PinnModel
    history: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float('inf')


def _batch_tensors(data: RefinementData, index: np.ndarray, scale: float):
    x = Tensor(channel_to_planes(data.h_init[index]) / scale)
    crop = Tensor(data.crops[index][:, None, :, :].astype(np.float64))
    truth = channel_to_planes(data.h_true[index]) / scale
    return x, crop, truth


def evaluate_loss(model: PinnModel, data: RefinementData, calibration: PowerCalibration, zeta: float,
                  batch_size: int = 32) -> float:
    total = 0.0
    with no_grad():
        for start in range(0, len(data), batch_size):
            index = np.arange(start, min(start + batch_size, len(data)))
            x, crop, truth = _batch_tensors(data, index, calibration.channel_scale)
            loss = loss_total(model.forward(x, crop), truth, data.rss_power_w[index], calibration, zeta)
            total += loss.item() * len(index)
    return total / len(data)


def write_history(history: List[Dict[str, float]], filename: str) -> None:
    with open(filename, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({key: repr(row[key]) if isinstance(row[key], float) else row[key]
                             for key in HISTORY_COLUMNS})
    logger.info(f"Training history written to {filename}")


def train(train_data: RefinementData, val_data: Optional[RefinementData], config: PinnConfig,
          hyper: TrainHyper, calibration: PowerCalibration,
          init_params: Optional[Mapping[str, np.ndarray]] = None,
          history_path: Optional[str] = None) -> TrainResult:
    """Minimize the total loss with Adam under a step-decay schedule

    Args:
        train_data: training samples
        val_data: validation samples (the training set is used when empty)
        config: network configuration
        hyper: optimizer, schedule and batching settings
        calibration: dataset power constants
        init_params: start from these parameters instead of a fresh initialization
        history_path: optional CSV file for the per-epoch history

    Returns:
        TrainResult whose model holds the best-validation parameters
    """
    if len(train_data) == 0:
        raise EmptyDataset("training set is empty")
    if train_data.h_true.shape[1] != config.multi_step_L:
        raise ShapeMismatch(f"targets carry {train_data.h_true.shape[1]} snapshots, "
                            f"network predicts {config.multi_step_L}")
    if val_data is None or len(val_data) == 0:
        logger.warning("No validation samples; selecting the checkpoint on training loss")
        val_data = train_data

    model = PinnModel(config, params=init_params, seed=hyper.seed)
    optimizer = Adam(model.parameters(), hyper.beta1, hyper.beta2, hyper.adam_eps)
    schedule = StepLR(hyper.init_lr, hyper.step_size, hyper.gamma)
    rng = np.random.default_rng(hyper.seed)
    result = TrainResult(model=model)
    best_state = model.state_dict()
    n = len(train_data)

    logger.info(f"Training on {n} samples, validating on {len(val_data)}, {hyper.epochs} epochs, "
                f"batch {hyper.batch_size}, zeta {hyper.zeta}")
    for epoch in range(hyper.epochs):
        lr = schedule.lr_at(epoch)
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, hyper.batch_size):
            index = order[start:start + hyper.batch_size]
            x, crop, truth = _batch_tensors(train_data, index, calibration.channel_scale)
            optimizer.zero_grad()
            with Tape() as tape:
                loss = loss_total(model.forward(x, crop), truth, train_data.rss_power_w[index],
                                  calibration, hyper.zeta)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} at epoch {epoch}, batch starting {start}, lr {lr:.3e}")
            backward(tape, loss)
            optimizer.step(lr)
            running += value * len(index)

        train_loss = running / n
        val_loss = evaluate_loss(model, val_data, calibration, hyper.zeta, hyper.batch_size)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"validation loss became {val_loss} at epoch {epoch}")
        result.history.append({'epoch': epoch, 'train_loss': train_loss, 'val_loss': val_loss, 'lr': lr})
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = model.state_dict()
        logger.info(f"Epoch {epoch}: train {train_loss:.6f}, val {val_loss:.6f}, lr {lr:.3e}")

    model.load_state(best_state)
    if history_path:
        write_history(result.history, history_path)
    logger.info(f"Best validation loss {result.best_val_loss:.6f} at epoch {result.best_epoch}")
    return result


def infer(model: PinnModel, h_init: np.ndarray, crops: np.ndarray, calibration: PowerCalibration,
          batch_size: int = 32) -> np.ndarray:
    """Forward pass without a tape; returns de-normalized complex snapshots [N, L, D, Nr, Nt]"""
    single = h_init.ndim == 3
    if single:
        h_init = h_init[None]
        crops = crops[None]
    cfg = model.config
    if h_init.shape[1:] != (cfg.d_taps, cfg.nr, cfg.nt):
        raise ShapeMismatch(f"initial estimates {h_init.shape[1:]} do not match the network "
                            f"({cfg.d_taps}, {cfg.nr}, {cfg.nt})")
    outputs = []
    with no_grad():
        for start in range(0, h_init.shape[0], batch_size):
            x = Tensor(channel_to_planes(h_init[start:start + batch_size]) / calibration.channel_scale)
            crop = Tensor(crops[start:start + batch_size][:, None, :, :].astype(np.float64))
            outputs.append(planes_to_channel(model.forward(x, crop).data) * calibration.channel_scale)
    refined = np.concatenate(outputs, axis=0)
    return refined[0] if single else refined
