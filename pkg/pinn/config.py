"""
Network and training hyperparameters
"""

from dataclasses import asdict, dataclass
from typing import Tuple

from core.errors import ConfigurationError, HeadDivisibility

RSS_TOKEN_MODES = ('pooled', 'spatial')
RSS_SOURCES = ('center', 'mean', 'true')


@dataclass(frozen=True)
class PinnConfig:
    """Shapes and widths of the refinement network; every parameter shape follows from these fields"""
    d_taps: int
    nr: int
    nt: int
    base_channels: Tuple[int, int, int] = (16, 32, 64)
    rss_channels: Tuple[int, int, int, int] = (32, 64, 128, 256)
    latent_dim: int = 64
    num_blocks: int = 2
    num_heads: int = 4
    ff_multiplier: int = 4
    crop_px: int = 12
    multi_step_L: int = 1
    norm_groups: int = 8
    rss_token_mode: str = 'pooled'
    input_residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'base_channels', tuple(int(c) for c in self.base_channels))
        object.__setattr__(self, 'rss_channels', tuple(int(c) for c in self.rss_channels))
        for name in ('d_taps', 'nr', 'nt', 'latent_dim', 'num_heads', 'crop_px', 'multi_step_L', 'ff_multiplier'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.num_blocks < 0:
            raise ConfigurationError("num_blocks must be >= 0")
        if len(self.base_channels) != 3 or len(self.rss_channels) != 4:
            raise ConfigurationError("need 3 encoder widths and 4 RSS-encoder widths")
        if any(c % self.norm_groups for c in self.base_channels):
            raise ConfigurationError(f"encoder widths {self.base_channels} must be divisible by "
                                     f"norm_groups={self.norm_groups}")
        if self.latent_dim % self.num_heads:
            raise HeadDivisibility(f"latent_dim {self.latent_dim} is not divisible by {self.num_heads} heads")
        if self.rss_token_mode not in RSS_TOKEN_MODES:
            raise ConfigurationError(f"rss_token_mode must be one of {RSS_TOKEN_MODES}")

    @property
    def in_planes(self) -> int:
        return 2 * self.d_taps

    def to_dict(self) -> dict:
        data = asdict(self)
        data['base_channels'] = list(self.base_channels)
        data['rss_channels'] = list(self.rss_channels)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'PinnConfig':
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigurationError(f"invalid network configuration: {e}") from e


@dataclass(frozen=True)
class TrainHyper:
    batch_size: int = 32
    epochs: int = 50
    init_lr: float = 1e-3
    step_size: int = 40
    gamma: float = 0.65
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    zeta: float = 0.01
    seed: int = 0
    rss_source: str = 'center'

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.step_size < 1:
            raise ConfigurationError("batch_size, epochs and step_size must be positive")
        if self.init_lr <= 0:
            raise ConfigurationError("init_lr must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.zeta < 0:
            raise ConfigurationError("zeta must be non-negative")
        if self.rss_source not in RSS_SOURCES:
            raise ConfigurationError(f"rss_source must be one of {RSS_SOURCES}")
