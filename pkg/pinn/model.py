"""
Physics-informed channel refinement network

ResUNet channel encoder, convolutional RSS encoder, cross-attention fusion of
channel tokens over RSS tokens, a pre-norm transformer over the fused tokens and
a skip-connected decoder emitting L channel snapshots.
"""

import logging
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from autodiff import functional as F
from autodiff.tensor import Tensor
from core.errors import CheckpointShapeMismatch, ShapeMismatch
from pinn.config import PinnConfig

logger = logging.getLogger(__name__)

ModelParams = Dict[str, Tensor]


class _ParamBuilder:
    """Creates named parameters in a fixed order from one seeded generator"""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: ModelParams = {}

    def _uniform(self, name: str, shape, fan_in: int):
        bound = 1.0 / np.sqrt(fan_in)
        self.params[name] = Tensor(self.rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)

    def _constant(self, name: str, shape, value: float):
        self.params[name] = Tensor(np.full(shape, value), requires_grad=True, name=name)

    def conv(self, name: str, c_out: int, c_in: int, k: int, bias: bool = True):
        self._uniform(f"{name}.weight", (c_out, c_in, k, k), c_in * k * k)
        if bias:
            self._constant(f"{name}.bias", (c_out,), 0.0)

    def conv_t(self, name: str, c_in: int, c_out: int, k: int, bias: bool = True):
        self._uniform(f"{name}.weight", (c_in, c_out, k, k), c_in * k * k)
        if bias:
            self._constant(f"{name}.bias", (c_out,), 0.0)

    def linear(self, name: str, out_f: int, in_f: int):
        self._uniform(f"{name}.weight", (out_f, in_f), in_f)
        self._constant(f"{name}.bias", (out_f,), 0.0)

    def norm(self, name: str, c: int):
        self._constant(f"{name}.gamma", (c,), 1.0)
        self._constant(f"{name}.beta", (c,), 0.0)


def init_params(config: PinnConfig, seed: int = 0) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases, unit/zero normalization affines"""
    b = _ParamBuilder(seed)
    c1, c2, c3 = config.base_channels
    dz = config.latent_dim

    for i, (c_in, c_out) in enumerate(((config.in_planes, c1), (c1, c2), (c2, c3))):
        b.conv(f"enc{i}.conv1", c_out, c_in, 3, bias=False)
        b.norm(f"enc{i}.gn1", c_out)
        b.conv(f"enc{i}.conv2", c_out, c_out, 3, bias=False)
        b.norm(f"enc{i}.gn2", c_out)
        b.conv(f"enc{i}.skip", c_out, c_in, 1, bias=False)
        b.norm(f"enc{i}.gn_skip", c_out)

    c_prev = 1
    for i, c in enumerate(config.rss_channels):
        b.conv(f"rss{i}.conv", c, c_prev, 3)
        c_prev = c

    b.linear('w_rss', dz, config.rss_channels[-1])
    b.linear('w_chan', dz, c3)
    for part in ('q', 'k', 'v', 'o'):
        b.linear(f"xattn.{part}", dz, dz)
    for j in range(config.num_blocks):
        b.norm(f"t{j}.ln1", dz)
        for part in ('q', 'k', 'v', 'o'):
            b.linear(f"t{j}.attn.{part}", dz, dz)
        b.norm(f"t{j}.ln2", dz)
        b.linear(f"t{j}.ff1", config.ff_multiplier * dz, dz)
        b.linear(f"t{j}.ff2", dz, config.ff_multiplier * dz)
    b.linear('w_out', c3, dz)

    for i, (c_in, c_out) in enumerate(((c3, c2), (2 * c2, c1), (2 * c1, c1))):
        b.conv_t(f"dec{i}.convt", c_in, c_out, 3, bias=False)
        b.norm(f"dec{i}.gn1", c_out)
        b.conv(f"dec{i}.conv", c_out, c_out, 3, bias=False)
        b.norm(f"dec{i}.gn2", c_out)
        b.conv_t(f"dec{i}.skip", c_in, c_out, 1, bias=False)
        b.norm(f"dec{i}.gn_skip", c_out)
    b.conv('head', config.in_planes * config.multi_step_L, c1, 3)

    logger.debug(f"Initialized {len(b.params)} parameter tensors "
                 f"({sum(t.size for t in b.params.values())} values)")
    return b.params


def _pad_amount(n: int) -> int:
    """Dims above 8 are padded up to a multiple of 8; smaller dims rely on ceil-halving"""
    return (-n) % 8 if n > 8 else 0


class PinnModel:
    """Parameters plus the forward pass of the refinement network"""

    def __init__(self, config: PinnConfig, params: Optional[Mapping[str, np.ndarray]] = None, seed: int = 0):
        self.config = config
        self.params = init_params(config, seed)
        if params is not None:
            self.load_state(params)

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise CheckpointShapeMismatch(f"checkpoint tensors differ from the configured network: "
                                          f"missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, t in self.params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise CheckpointShapeMismatch(f"{name}: checkpoint shape {value.shape}, network expects {t.shape}")
            t.data = value.copy()

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    # -- building blocks --------------------------------------------------

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return F.group_norm(x, self.config.norm_groups, self._p(f"{name}.gamma"), self._p(f"{name}.beta"))

    def _down_block(self, x: Tensor, i: int) -> Tensor:
        p = f"enc{i}"
        h = F.leaky_relu(self._norm(F.conv2d(x, self._p(f"{p}.conv1.weight"), stride=1, padding=1), f"{p}.gn1"))
        h = self._norm(F.conv2d(h, self._p(f"{p}.conv2.weight"), stride=2, padding=1), f"{p}.gn2")
        skip = self._norm(F.conv2d(x, self._p(f"{p}.skip.weight"), stride=2, padding=0), f"{p}.gn_skip")
        return F.leaky_relu(F.add(h, skip))

    def _up_block(self, x: Tensor, i: int, size: Tuple[int, int]) -> Tensor:
        p = f"dec{i}"
        h = F.conv_transpose2d(x, self._p(f"{p}.convt.weight"), stride=2, padding=1, output_size=size)
        h = F.relu(self._norm(h, f"{p}.gn1"))
        h = self._norm(F.conv2d(h, self._p(f"{p}.conv.weight"), stride=1, padding=1), f"{p}.gn2")
        skip = F.conv_transpose2d(x, self._p(f"{p}.skip.weight"), stride=2, padding=0, output_size=size)
        skip = self._norm(skip, f"{p}.gn_skip")
        return F.relu(F.add(h, skip))

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return F.linear(x, self._p(f"{name}.weight"), self._p(f"{name}.bias"))

    def _layer_norm(self, x: Tensor, name: str) -> Tensor:
        return F.layer_norm(x, self._p(f"{name}.gamma"), self._p(f"{name}.beta"))

    def multi_head_attention(self, prefix: str, xq: Tensor, xkv: Tensor, return_weights: bool = False):
        """softmax(Q K^T / sqrt(D_z)) V over num_heads heads, followed by the output projection

        Args:
            prefix: parameter prefix of the q/k/v/o projections
            xq: query tokens [N, T, D_z]
            xkv: key/value tokens [N, S, D_z]
            return_weights: also return the attention weights [N, heads, T, S]
        """
        n, t, dz = xq.shape
        s = xkv.shape[1]
        if xkv.shape[0] != n or xkv.shape[2] != dz:
            raise ShapeMismatch(f"attention: queries {xq.shape} vs keys {xkv.shape}")
        heads = self.config.num_heads
        dh = dz // heads

        def split(x, length):
            return F.transpose(F.reshape(x, (n, length, heads, dh)), (0, 2, 1, 3))

        q = split(self._linear(xq, f"{prefix}.q"), t)
        k = split(self._linear(xkv, f"{prefix}.k"), s)
        v = split(self._linear(xkv, f"{prefix}.v"), s)
        scores = F.scale(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dz))
        weights = F.softmax(scores, axis=-1)
        context = F.reshape(F.transpose(F.matmul(weights, v), (0, 2, 1, 3)), (n, t, dz))
        out = self._linear(context, f"{prefix}.o")
        return (out, weights) if return_weights else out

    # -- network stages ---------------------------------------------------

    def encode_channel(self, x: Tensor) -> Tuple[Tensor, List[Tensor]]:
        """Three stride-2 residual blocks; returns the deepest map and the two intermediate skips"""
        if x.ndim != 4 or x.shape[1] != self.config.in_planes:
            raise ShapeMismatch(f"channel input must be [N, {self.config.in_planes}, H, W], got {x.shape}")
        e1 = self._down_block(x, 0)
        e2 = self._down_block(e1, 1)
        e3 = self._down_block(e2, 2)
        return e3, [e1, e2]

    def encode_rss(self, crop: Tensor) -> Tuple[Tensor, Tensor]:
        """Conv-ReLU-MaxPool stages then global average pooling

        Returns:
            (pooled vector [N, C], last feature map [N, C, h, w])
        """
        c = self.config.crop_px
        if crop.ndim != 4 or crop.shape[1:] != (1, c, c):
            raise ShapeMismatch(f"RSS crop must be [N, 1, {c}, {c}], got {crop.shape}")
        h = crop
        last = len(self.config.rss_channels) - 1
        for i in range(last + 1):
            h = F.relu(F.conv2d(h, self._p(f"rss{i}.conv.weight"), self._p(f"rss{i}.conv.bias"), padding=1))
            if i < last:
                h = F.max_pool2d(h)
        return F.adaptive_avg_pool_to_1x1(h), h

    def rss_tokens(self, crop: Tensor) -> Tensor:
        pooled, fmap = self.encode_rss(crop)
        n = crop.shape[0]
        if self.config.rss_token_mode == 'pooled':
            tokens = F.reshape(pooled, (n, 1, pooled.shape[1]))
        else:
            _, ch, h, w = fmap.shape
            tokens = F.reshape(F.transpose(fmap, (0, 2, 3, 1)), (n, h * w, ch))
        return self._linear(tokens, 'w_rss')

    def cross_attention(self, f_chan: Tensor, f_rss: Tensor) -> Tensor:
        """Channel tokens attend over RSS tokens; the result is added back to the channel tokens"""
        return F.add(f_chan, self.multi_head_attention('xattn', f_chan, f_rss))

    def transformer_latent(self, tokens: Tensor) -> Tensor:
        if tokens.ndim != 3 or tokens.shape[2] != self.config.latent_dim:
            raise ShapeMismatch(f"tokens must be [N, T, {self.config.latent_dim}], got {tokens.shape}")
        x = tokens
        for j in range(self.config.num_blocks):
            normed = self._layer_norm(x, f"t{j}.ln1")
            x = F.add(x, self.multi_head_attention(f"t{j}.attn", normed, normed))
            normed = self._layer_norm(x, f"t{j}.ln2")
            x = F.add(x, self._linear(F.relu(self._linear(normed, f"t{j}.ff1")), f"t{j}.ff2"))
        return x

    def decode(self, latent: Tensor, skips: List[Tensor], out_hw: Tuple[int, int]) -> Tensor:
        """Mirror of the encoder with skip concatenation; emits 2D*L planes at out_hw"""
        e1, e2 = skips
        d = self._up_block(latent, 0, e2.shape[2:])
        d = self._up_block(F.concat([d, e2], axis=1), 1, e1.shape[2:])
        d = self._up_block(F.concat([d, e1], axis=1), 2, tuple(out_hw))
        return F.conv2d(d, self._p('head.weight'), self._p('head.bias'), padding=1)

    def forward(self, x: Tensor, crop: Tensor) -> Tensor:
        """Refine normalized initial estimates

        Args:
            x: initial estimates as re/im planes [N, 2D, Nr, Nt]
            crop: RSS crops [N, 1, c, c]

        Returns:
            Snapshots [N, L, 2D, Nr, Nt]
        """
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (cfg.in_planes, cfg.nr, cfg.nt):
            raise ShapeMismatch(f"input must be [N, {cfg.in_planes}, {cfg.nr}, {cfg.nt}], got {x.shape}")
        if crop.shape[0] != x.shape[0]:
            raise ShapeMismatch("channel and RSS batches differ in size")
        n, _, h, w = x.shape
        ph, pw = _pad_amount(h), _pad_amount(w)
        xp = F.pad2d(x, 0, ph, 0, pw) if ph or pw else x

        e3, skips = self.encode_channel(xp)
        _, c3, h3, w3 = e3.shape
        tokens = self._linear(F.reshape(F.transpose(e3, (0, 2, 3, 1)), (n, h3 * w3, c3)), 'w_chan')
        fused = self.cross_attention(tokens, self.rss_tokens(crop))
        latent = self.transformer_latent(fused)
        back = F.transpose(F.reshape(self._linear(latent, 'w_out'), (n, h3, w3, c3)), (0, 3, 1, 2))

        out = self.decode(F.add(e3, back), skips, xp.shape[2:])
        if ph or pw:
            out = F.crop2d(out, h, w)
        out = F.reshape(out, (n, cfg.multi_step_L, cfg.in_planes, h, w))
        if cfg.input_residual:
            out = F.add(out, F.reshape(x, (n, 1, cfg.in_planes, h, w)))
        return out
