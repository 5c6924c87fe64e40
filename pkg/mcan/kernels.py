"""
Array kernels behind the tensor primitives.

Every kernel works on NCHW numpy arrays of any float dtype and has a matching
``*_backward`` vector-Jacobian product. Summation orders are fixed so results
are bitwise reproducible for identical inputs.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: Optional[np.ndarray],
    groups: int,
    padding: Tuple[int, int],
) -> np.ndarray:
    """Stride-1 grouped cross-correlation, accumulated kernel offset by kernel offset"""
    n, _, h, w = x.shape
    c_out, c_in_group, kh, kw = weight.shape
    ph, pw = padding
    h_out = h + 2 * ph - kh + 1
    w_out = w + 2 * pw - kw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    out = np.zeros((n, c_out, h_out * w_out), dtype=x.dtype)
    c_out_group = c_out // groups
    for g in range(groups):
        xg = xp[:, g * c_in_group:(g + 1) * c_in_group]
        wg = weight[g * c_out_group:(g + 1) * c_out_group]
        og = out[:, g * c_out_group:(g + 1) * c_out_group]
        for i in range(kh):
            for j in range(kw):
                patch = xg[:, :, i:i + h_out, j:j + w_out].reshape(n, c_in_group, h_out * w_out)
                og += np.matmul(wg[:, :, i, j], patch)
    out = out.reshape(n, c_out, h_out, w_out)
    if bias is not None:
        out += bias.reshape(1, c_out, 1, 1)
    return out


def conv2d_backward(
    grad: np.ndarray,
    x: np.ndarray,
    weight: np.ndarray,
    groups: int,
    padding: Tuple[int, int],
    need_input_grad: bool = True,
) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    """Gradients of conv2d with respect to input, weight and bias"""
    n, c_in, h, w = x.shape
    c_out, c_in_group, kh, kw = weight.shape
    ph, pw = padding
    h_out, w_out = grad.shape[2], grad.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    grad_flat = grad.reshape(n, c_out, h_out * w_out)
    grad_weight = np.zeros_like(weight)
    grad_xp = np.zeros_like(xp) if need_input_grad else None
    c_out_group = c_out // groups
    for g in range(groups):
        cin = slice(g * c_in_group, (g + 1) * c_in_group)
        cout = slice(g * c_out_group, (g + 1) * c_out_group)
        xg = xp[:, cin]
        gg = grad_flat[:, cout]
        for i in range(kh):
            for j in range(kw):
                patch = xg[:, :, i:i + h_out, j:j + w_out].reshape(n, c_in_group, h_out * w_out)
                grad_weight[cout, :, i, j] = np.tensordot(gg, patch, axes=([0, 2], [0, 2]))
                if grad_xp is not None:
                    back = np.matmul(weight[cout, :, i, j].T, gg)
                    grad_xp[:, cin, i:i + h_out, j:j + w_out] += back.reshape(n, c_in_group, h_out, w_out)
    grad_bias = grad.sum(axis=(0, 2, 3))
    grad_x = None
    if grad_xp is not None:
        grad_x = grad_xp[:, :, ph:ph + h, pw:pw + w] if ph or pw else grad_xp
        grad_x = np.ascontiguousarray(grad_x)
    return grad_x, grad_weight, grad_bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient 0 at the kink
    return grad * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)


def sigmoid_backward(grad: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad * y * (1 - y)


def fast_sigmoid(x: np.ndarray) -> np.ndarray:
    return x / (1 + np.abs(x))


def fast_sigmoid_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    d = 1 + np.abs(x)
    return grad / (d * d)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(2, 3), keepdims=True, dtype=x.dtype)


def global_avg_pool_backward(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    area = shape[2] * shape[3]
    return np.broadcast_to(grad / area, shape).copy()


def scale_channels(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    return x * s


def scale_channels_backward(grad: np.ndarray, x: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return grad * s, (grad * x).sum(axis=(2, 3), keepdims=True)


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if len(parts) == 1:
        return parts[0]
    return np.concatenate(parts, axis=1)


def concat_channels_backward(grad: np.ndarray, widths: Sequence[int]) -> List[np.ndarray]:
    bounds = np.cumsum(widths)[:-1]
    return [np.ascontiguousarray(part) for part in np.split(grad, bounds, axis=1)]


def pixel_shuffle(x: np.ndarray, s: int) -> np.ndarray:
    if s == 1:
        return x
    n, c, h, w = x.shape
    out_c = c // (s * s)
    y = x.reshape(n, out_c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y).reshape(n, out_c, h * s, w * s)


def pixel_unshuffle(x: np.ndarray, s: int) -> np.ndarray:
    if s == 1:
        return x
    n, c, h, w = x.shape
    y = x.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y).reshape(n, c * s * s, h // s, w // s)


def _bilinear_taps(size: int, s: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source taps and weights for half-pixel-center sampling (align_corners=False)"""
    dst = np.arange(size * s, dtype=np.float64)
    src = np.maximum((dst + 0.5) / s - 0.5, 0.0)
    lo = np.floor(src).astype(np.int64)
    lo = np.minimum(lo, size - 1)
    hi = np.minimum(lo + 1, size - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(x: np.ndarray, s: int) -> np.ndarray:
    if s == 1:
        return x.copy()
    _, _, h, w = x.shape
    lo, hi, frac = _bilinear_taps(h, s)
    frac = frac.astype(x.dtype).reshape(1, 1, -1, 1)
    rows = x[:, :, lo, :] + frac * (x[:, :, hi, :] - x[:, :, lo, :])
    lo, hi, frac = _bilinear_taps(w, s)
    frac = frac.astype(x.dtype).reshape(1, 1, 1, -1)
    return rows[:, :, :, lo] + frac * (rows[:, :, :, hi] - rows[:, :, :, lo])


def dihedral(x: np.ndarray, g: int) -> np.ndarray:
    """Element g of the 8-element square symmetry group acting on the spatial axes"""
    y = np.rot90(x, k=g % 4, axes=(2, 3))
    if g >= 4:
        y = np.swapaxes(y, 2, 3)
    return np.ascontiguousarray(y)


def inverse_dihedral(x: np.ndarray, g: int) -> np.ndarray:
    y = np.swapaxes(x, 2, 3) if g >= 4 else x
    return np.ascontiguousarray(np.rot90(y, k=-(g % 4), axes=(2, 3)))
