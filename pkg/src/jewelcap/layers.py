"""Forward/backward neural layers built on the tensor tape.

Recurrent cells use the standard gate formulations:

  GRU:  z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        hb = tanh(x W_h + (r*h) U_h + b_h)
        h' = (1 - z)*h + z*hb

  LSTM: i, f, o = sigmoid(x W_* + h U_* + b_*)
        g  = tanh(x W_g + h U_g + b_g)
        c' = f*c + i*g
        h' = o*tanh(c')

Convolution is cross-correlation (no kernel flip). For small inputs the
forward pass accumulates kernel taps in (channel, row, col) order, which
makes it bit-identical to a naive quadruple-loop recomputation; larger
inputs take an im2col/matmul path (same math, BLAS summation order).
Max-pool gradient goes to the first maximum in row-major window order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .tensor import (
    GradientMap,
    ShapeError,
    Tensor,
    reshape,
    tensor_binary,
    tensor_unary,
    _accumulate,
)

__all__ = [
    "LayerParams",
    "conv2d",
    "maxpool2d",
    "dense",
    "embedding",
    "gru_step",
    "lstm_step",
    "softmax_cross_entropy",
    "xavier_uniform",
    "conv_params",
    "dense_params",
    "embedding_params",
    "gru_params",
    "lstm_params",
]

GRU_GATES = ("z", "r", "h")
LSTM_GATES = ("i", "f", "o", "g")

# Spatial area at or below which conv2d uses the tap-order-exact kernel.
_EXACT_CONV_AREA = 16 * 16


@dataclass
class LayerParams:
    """Named parameter tensors for one layer; names are stable across save/load."""

    name: str
    tensors: Dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Tensor:
        return self.tensors[key]


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def conv_params(name: str, in_channels: int, out_channels: int, kernel: int,
                rng: np.random.Generator) -> LayerParams:
    fan_in = in_channels * kernel * kernel
    fan_out = out_channels * kernel * kernel
    weight = xavier_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in, fan_out)
    return LayerParams(name, {
        "weight": Tensor(weight, requires_grad=True),
        "bias": Tensor(np.zeros(out_channels), requires_grad=True),
    })


def dense_params(name: str, n_in: int, n_out: int, rng: np.random.Generator) -> LayerParams:
    return LayerParams(name, {
        "weight": Tensor(xavier_uniform(rng, (n_in, n_out), n_in, n_out), requires_grad=True),
        "bias": Tensor(np.zeros(n_out), requires_grad=True),
    })


def embedding_params(name: str, vocab_size: int, dim: int, rng: np.random.Generator) -> LayerParams:
    table = xavier_uniform(rng, (vocab_size, dim), vocab_size, dim)
    return LayerParams(name, {"table": Tensor(table, requires_grad=True)})


def _gate_params(gates, input_dim: int, hidden_dim: int, rng: np.random.Generator):
    tensors = {}
    for g in gates:
        tensors[f"W_{g}"] = Tensor(
            xavier_uniform(rng, (input_dim, hidden_dim), input_dim, hidden_dim), requires_grad=True)
        tensors[f"U_{g}"] = Tensor(
            xavier_uniform(rng, (hidden_dim, hidden_dim), hidden_dim, hidden_dim), requires_grad=True)
        tensors[f"b_{g}"] = Tensor(np.zeros(hidden_dim), requires_grad=True)
    return tensors


def gru_params(name: str, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> LayerParams:
    return LayerParams(name, _gate_params(GRU_GATES, input_dim, hidden_dim, rng))


def lstm_params(name: str, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> LayerParams:
    return LayerParams(name, _gate_params(LSTM_GATES, input_dim, hidden_dim, rng))


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {hp}x{wp}")
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def _pad_input(arr: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return arr
    b, c, h, w = arr.shape
    out = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    out[:, :, padding:padding + h, padding:padding + w] = arr
    return out


def conv2d(x: Tensor, params: LayerParams, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over (C,H,W) or (B,C,H,W) input."""
    weight, bias = params["weight"], params["bias"]
    single = x.array.ndim == 3
    if x.array.ndim not in (3, 4):
        raise ShapeError(f"conv2d expects (C,H,W) or (B,C,H,W), got {x.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")

    xin = x.array[None] if single else x.array
    b, c, h, w = xin.shape
    k, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernels {weight.shape}")
    ho, wo = _conv_geometry(h, w, kh, kw, stride, padding)
    pad = _pad_input(xin, padding)

    if h * w <= _EXACT_CONV_AREA:
        out, saved = _conv_forward_exact(pad, weight.array, bias.array, stride, ho, wo)
    else:
        out, saved = _conv_forward_im2col(pad, weight.array, bias.array, stride, ho, wo)

    def backward(grad_out: np.ndarray, grads: GradientMap) -> None:
        go = grad_out[None] if single else grad_out
        gx_pad, gw, gb = _conv_backward(go, saved, weight.array, stride, kh, kw)
        gx = gx_pad[:, :, padding:padding + h, padding:padding + w]
        _accumulate(grads, x, gx[0] if single else gx)
        _accumulate(grads, weight, gw)
        _accumulate(grads, bias, gb)

    res = out[0] if single else out
    return Tensor._from_op(res, "conv2d", (x, weight, bias), backward)


def _conv_forward_exact(pad, weight, bias, stride, ho, wo):
    b = pad.shape[0]
    k, c, kh, kw = weight.shape
    out = np.empty((b, k, ho, wo))
    out[:] = bias[None, :, None, None]
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                tap = pad[:, ci, i:i + (ho - 1) * stride + 1:stride,
                          j:j + (wo - 1) * stride + 1:stride]
                out += tap[:, None, :, :] * weight[None, :, ci, i, j, None, None]
    return out, ("exact", pad)


def _conv_forward_im2col(pad, weight, bias, stride, ho, wo):
    b = pad.shape[0]
    k, c, kh, kw = weight.shape
    cols = np.empty((b, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = pad[:, :, i:i + (ho - 1) * stride + 1:stride,
                                   j:j + (wo - 1) * stride + 1:stride]
    cols2 = cols.reshape(b, c * kh * kw, ho * wo)
    w2 = weight.reshape(k, c * kh * kw)
    out = np.matmul(w2[None], cols2).reshape(b, k, ho, wo)
    out += bias[None, :, None, None]
    return out, ("im2col", pad.shape, cols2)


def _conv_backward(go, saved, weight, stride, kh, kw):
    b, k, ho, wo = go.shape
    c = weight.shape[1]
    gb = go.sum(axis=(0, 2, 3))
    go2 = go.reshape(b, k, ho * wo)
    w2 = weight.reshape(k, c * kh * kw)

    if saved[0] == "exact":
        pad = saved[1]
        gw = np.zeros_like(weight)
        gx_pad = np.zeros_like(pad)
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    sl_h = slice(i, i + (ho - 1) * stride + 1, stride)
                    sl_w = slice(j, j + (wo - 1) * stride + 1, stride)
                    tap = pad[:, ci, sl_h, sl_w]
                    gw[:, ci, i, j] = np.tensordot(go, tap, axes=([0, 2, 3], [0, 1, 2]))
                    gx_pad[:, ci, sl_h, sl_w] += np.tensordot(go, weight[:, ci, i, j], axes=(1, 0))
        return gx_pad, gw, gb

    _, pad_shape, cols2 = saved
    gw = (go2.transpose(1, 0, 2).reshape(k, b * ho * wo)
          @ cols2.transpose(0, 2, 1).reshape(b * ho * wo, c * kh * kw)).reshape(weight.shape)
    gcols = np.matmul(w2.T[None], go2).reshape(b, c, kh, kw, ho, wo)
    gx_pad = np.zeros(pad_shape)
    for i in range(kh):
        for j in range(kw):
            gx_pad[:, :, i:i + (ho - 1) * stride + 1:stride,
                   j:j + (wo - 1) * stride + 1:stride] += gcols[:, :, i, j]
    return gx_pad, gw, gb


def maxpool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Max pooling; gradient routes to the first max per window (row-major)."""
    if stride is None:
        stride = window
    single = x.array.ndim == 3
    if x.array.ndim not in (3, 4):
        raise ShapeError(f"maxpool2d expects (C,H,W) or (B,C,H,W), got {x.shape}")
    xin = x.array[None] if single else x.array
    b, c, h, w = xin.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} exceeds input {h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1

    win = np.lib.stride_tricks.sliding_window_view(xin, (window, window), axis=(2, 3))
    win = win[:, :, ::stride, ::stride].reshape(b, c, ho, wo, window * window)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(grad_out: np.ndarray, grads: GradientMap) -> None:
        go = (grad_out[None] if single else grad_out)
        gx = np.zeros_like(xin)
        oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
        rows = oy * stride + arg // window  # (b,c,ho,wo) via broadcast
        cols_ = ox * stride + arg % window
        bi = np.arange(b)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(gx, (bi, ci, rows, cols_), go)
        _accumulate(grads, x, gx[0] if single else gx)

    res = out[0] if single else out
    return Tensor._from_op(res, "maxpool2d", (x,), backward)


def dense(x: Tensor, params: LayerParams) -> Tensor:
    """x @ W + b with the bias broadcast over rows."""
    return tensor_binary("add", tensor_binary("matmul", x, params["weight"]), params["bias"])


def embedding(ids, params: LayerParams) -> Tensor:
    """Row gather from the embedding table; gradient scatter-adds into rows."""
    table = params["table"]
    idx = np.asarray(ids, dtype=np.int64)
    v = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexError(f"embedding ids out of range [0, {v})")
    out = table.array[idx]

    def backward(grad_out: np.ndarray, grads: GradientMap) -> None:
        gt = np.zeros_like(table.array)
        np.add.at(gt, idx, grad_out)
        _accumulate(grads, table, gt)

    return Tensor._from_op(out, "embedding", (table,), backward)


def _lift(v: Tensor) -> tuple[Tensor, bool]:
    if v.array.ndim == 1:
        return reshape(v, (1, v.shape[0])), True
    return v, False


def _gate(x: Tensor, h: Tensor, params: LayerParams, g: str, activation: str) -> Tensor:
    pre = tensor_binary("add", tensor_binary("matmul", x, params[f"W_{g}"]),
                        tensor_binary("matmul", h, params[f"U_{g}"]))
    pre = tensor_binary("add", pre, params[f"b_{g}"])
    return tensor_unary(activation, pre)


def gru_step(x: Tensor, h: Tensor, params: LayerParams) -> Tensor:
    x2, squeezed = _lift(x)
    h2, _ = _lift(h)
    z = _gate(x2, h2, params, "z", "sigmoid")
    r = _gate(x2, h2, params, "r", "sigmoid")
    rh = tensor_binary("mul_elementwise", r, h2)
    hb = _gate(x2, rh, params, "h", "tanh")
    one = Tensor(np.ones(z.shape))
    keep = tensor_binary("mul_elementwise", tensor_binary("sub", one, z), h2)
    new = tensor_binary("mul_elementwise", z, hb)
    out = tensor_binary("add", keep, new)
    if squeezed:
        out = reshape(out, (out.shape[-1],))
    return out


def lstm_step(x: Tensor, state: tuple[Tensor, Tensor], params: LayerParams) -> tuple[Tensor, Tensor]:
    h, c = state
    x2, squeezed = _lift(x)
    h2, _ = _lift(h)
    c2, _ = _lift(c)
    i = _gate(x2, h2, params, "i", "sigmoid")
    f = _gate(x2, h2, params, "f", "sigmoid")
    o = _gate(x2, h2, params, "o", "sigmoid")
    g = _gate(x2, h2, params, "g", "tanh")
    c_new = tensor_binary("add", tensor_binary("mul_elementwise", f, c2),
                          tensor_binary("mul_elementwise", i, g))
    h_new = tensor_binary("mul_elementwise", o, tensor_unary("tanh", c_new))
    if squeezed:
        n = h_new.shape[-1]
        return reshape(h_new, (n,)), reshape(c_new, (n,))
    return h_new, c_new


def softmax_cross_entropy(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over non-ignored positions.

    Gradient is (softmax - one_hot) / count on active rows, zero elsewhere.
    """
    if logits.array.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (B,V) logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    b, v = logits.shape
    if t.shape[0] != b:
        raise ShapeError(f"targets length {t.shape[0]} != batch {b}")
    active = np.ones(b, dtype=bool) if ignore_index is None else (t != ignore_index)
    count = int(active.sum())
    if count == 0:
        raise ValueError("softmax_cross_entropy: all positions ignored")
    ta = t[active]
    if ta.min() < 0 or ta.max() >= v:
        raise IndexError(f"targets out of range [0, {v})")

    shifted = logits.array - logits.array.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    nll = logsumexp[active] - shifted[active, ta]
    loss = np.asarray(nll.sum() / count)

    def backward(grad_out: np.ndarray, grads: GradientMap) -> None:
        p = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        p[~active] = 0.0
        rows = np.nonzero(active)[0]
        p[rows, ta] -= 1.0
        _accumulate(grads, logits, grad_out * p / count)

    return Tensor._from_op(loss, "softmax_cross_entropy", (logits,), backward)
