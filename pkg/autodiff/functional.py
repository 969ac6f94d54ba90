"""
Differentiable primitives

Every function takes and returns Tensor objects and records itself on the active
tape. Image tensors are laid out [N, C, H, W]; convolution weights are
[C_out, C_in, k, k] and transposed-convolution weights [C_in, C_out, k, k].
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from autodiff.tensor import Tensor, record_op
from core.errors import ShapeMismatch

GROUP_NORM_EPS = 1e-5
LAYER_NORM_EPS = 1e-5


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> np.ndarray:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, 'add')
    return record_op(a.data + b.data, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, 'sub')
    return record_op(a.data - b.data, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, 'mul')
    return record_op(a.data * b.data, (a, b),
                     lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, factor: float) -> Tensor:
    return record_op(a.data * factor, (a,), lambda g: (g * factor,))


def square(a: Tensor) -> Tensor:
    return record_op(a.data ** 2, (a,), lambda g: (2.0 * a.data * g,))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return record_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {tuple(shape)}") from e
    return record_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return record_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record_op(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched product; batch dims of a and b must match, or b is a 2-D matrix"""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul: batch dims differ, {a.shape[:-2]} vs {b.shape[:-2]}")

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb
    return record_op(a.data @ b.data, (a, b), grad_fn)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight.T + bias over the last axis; weight is [out, in]"""
    out_f, in_f = weight.shape
    if x.shape[-1] != in_f:
        raise ShapeMismatch(f"linear: input width {x.shape[-1]} != weight fan-in {in_f}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def grad_fn(g):
        g2 = g.reshape(-1, out_f)
        gx = g @ weight.data
        gw = g2.T @ x.data.reshape(-1, in_f)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record_op(out, inputs, grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope)
    return record_op(x.data * factor, (x,), lambda g: (g * factor,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)
    return record_op(y, (x,), grad_fn)


def _check_image(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeMismatch(f"{op}: expected [N, C, H, W], got {x.shape}")


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    _check_image(x, 'pad2d')
    out = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    h, w = x.shape[2], x.shape[3]
    return record_op(out, (x,), lambda g: (g[:, :, top:top + h, left:left + w],))


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window"""
    _check_image(x, 'crop2d')
    if height > x.shape[2] or width > x.shape[3]:
        raise ShapeMismatch(f"crop2d: {height}x{width} larger than {x.shape[2:]}")

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[:, :, :height, :width] = g
        return (full,)
    return record_op(x.data[:, :, :height, :width], (x,), grad_fn)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    _check_image(x, 'conv2d')
    n, c_in, h, w = x.shape
    c_out, w_in, k, k2 = weight.shape
    if w_in != c_in or k != k2:
        raise ShapeMismatch(f"conv2d: input {x.shape} vs weight {weight.shape}")
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeMismatch(f"conv2d: input {x.shape} too small for kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    rows = [slice(i, i + stride * (h_out - 1) + 1, stride) for i in range(k)]
    cols = [slice(j, j + stride * (w_out - 1) + 1, stride) for j in range(k)]

    out = np.zeros((n, c_out, h_out, w_out))
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, rows[i], cols[j]]
            out += np.tensordot(weight.data[:, :, i, j], patch, axes=([1], [1])).transpose(1, 0, 2, 3)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def grad_fn(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for i in range(k):
            for j in range(k):
                patch = xp[:, :, rows[i], cols[j]]
                gw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
                gxp[:, :, rows[i], cols[j]] += np.tensordot(g, weight.data[:, :, i, j],
                                                            axes=([1], [0])).transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record_op(out, inputs, grad_fn)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
                     padding: int = 0, output_size: Optional[Tuple[int, int]] = None) -> Tensor:
    """Adjoint of conv2d with the same kernel, stride and padding

    output_size selects the extra rows/columns (output padding) that the forward
    convolution's floor division discarded.
    """
    _check_image(x, 'conv_transpose2d')
    n, c_in, h, w = x.shape
    w_in, c_out, k, k2 = weight.shape
    if w_in != c_in or k != k2:
        raise ShapeMismatch(f"conv_transpose2d: input {x.shape} vs weight {weight.shape}")
    base_h = (h - 1) * stride - 2 * padding + k
    base_w = (w - 1) * stride - 2 * padding + k
    if output_size is None:
        extra_h = extra_w = 0
    else:
        extra_h = output_size[0] - base_h
        extra_w = output_size[1] - base_w
        if not (0 <= extra_h < max(stride, 1) and 0 <= extra_w < max(stride, 1)):
            raise ShapeMismatch(f"conv_transpose2d: cannot reach {tuple(output_size)} from {x.shape[2:]}")
    h_out = base_h + extra_h
    w_out = base_w + extra_w
    full_shape = (n, c_out, (h - 1) * stride + k + extra_h, (w - 1) * stride + k + extra_w)
    rows = [slice(i, i + stride * (h - 1) + 1, stride) for i in range(k)]
    cols = [slice(j, j + stride * (w - 1) + 1, stride) for j in range(k)]

    full = np.zeros(full_shape)
    for i in range(k):
        for j in range(k):
            full[:, :, rows[i], cols[j]] += np.tensordot(x.data, weight.data[:, :, i, j],
                                                         axes=([1], [0])).transpose(0, 3, 1, 2)
    out = full[:, :, padding:padding + h_out, padding:padding + w_out].copy()
    if bias is not None:
        out += bias.data[None, :, None, None]

    def grad_fn(g):
        gfull = np.zeros(full_shape)
        gfull[:, :, padding:padding + h_out, padding:padding + w_out] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        for i in range(k):
            for j in range(k):
                window = gfull[:, :, rows[i], cols[j]]
                gx += np.tensordot(window, weight.data[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                gw[:, :, i, j] = np.tensordot(x.data, window, axes=([0, 2, 3], [0, 2, 3]))
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record_op(out, inputs, grad_fn)


def _normalize_backward(g_hat: np.ndarray, x_hat: np.ndarray, inv_std: np.ndarray, axis) -> np.ndarray:
    count = int(np.prod([g_hat.shape[a] for a in np.atleast_1d(axis)]))
    return inv_std / count * (
        count * g_hat
        - np.sum(g_hat, axis=axis, keepdims=True)
        - x_hat * np.sum(g_hat * x_hat, axis=axis, keepdims=True)
    )


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = GROUP_NORM_EPS) -> Tensor:
    _check_image(x, 'group_norm')
    n, c, h, w = x.shape
    if c % groups != 0:
        raise ShapeMismatch(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"group_norm: affine parameters must have shape ({c},)")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = ((xg - mu) * inv_std).reshape(x.shape)
    out = x_hat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def grad_fn(g):
        g_hat = (g * gamma.data[None, :, None, None]).reshape(n, groups, -1)
        gx = _normalize_backward(g_hat, x_hat.reshape(n, groups, -1), inv_std, 2).reshape(x.shape)
        return gx, np.sum(g * x_hat, axis=(0, 2, 3)), np.sum(g, axis=(0, 2, 3))
    return record_op(out, (x, gamma, beta), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    features = x.shape[-1]
    if gamma.shape != (features,) or beta.shape != (features,):
        raise ShapeMismatch(f"layer_norm: affine parameters must have shape ({features},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu) * inv_std
    out = x_hat * gamma.data + beta.data

    def grad_fn(g):
        gx = _normalize_backward(g * gamma.data, x_hat, inv_std, -1)
        lead = tuple(range(x.ndim - 1))
        return gx, np.sum(g * x_hat, axis=lead), np.sum(g, axis=lead)
    return record_op(out, (x, gamma, beta), grad_fn)


def adaptive_avg_pool_to_1x1(x: Tensor) -> Tensor:
    """Spatial mean, flattened to [N, C]"""
    _check_image(x, 'adaptive_avg_pool_to_1x1')
    n, c, h, w = x.shape

    def grad_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)
    return record_op(x.data.mean(axis=(2, 3)), (x,), grad_fn)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2, floor mode; a spatial dim of size 1 passes through"""
    _check_image(x, 'max_pool2d')
    n, c, h, w = x.shape
    kh = 2 if h > 1 else 1
    kw = 2 if w > 1 else 1
    ho, wo = h // kh, w // kw
    windows = (x.data[:, :, :ho * kh, :wo * kw]
               .reshape(n, c, ho, kh, wo, kw)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, ho, wo, kh * kw))
    idx = np.argmax(windows, axis=-1)[..., None]
    out = np.take_along_axis(windows, idx, axis=-1)[..., 0]

    def grad_fn(g):
        gwin = np.zeros_like(windows)
        np.put_along_axis(gwin, idx, g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, :ho * kh, :wo * kw] = (gwin.reshape(n, c, ho, wo, kh, kw)
                                        .transpose(0, 1, 2, 4, 3, 5)
                                        .reshape(n, c, ho * kh, wo * kw))
        return (gx,)
    return record_op(out, (x,), grad_fn)
