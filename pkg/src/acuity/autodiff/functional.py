"""Neural-network kernels on top of the tensor graph.

Sequence tensors are laid out batch x channels x length.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _accumulate, _make, _sigmoid, as_tensor, matmul, softmax, transpose, reshape


def conv_output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 1D cross-correlation.

    ``weight`` has shape (C_out, C_in // groups, K).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects 3-axis input and kernel, got {x.shape} and {weight.shape}")
    B, C, L = x.shape
    O, Cg, K = weight.shape
    if C != Cg * groups or O % groups:
        raise ValueError(f"channel mismatch: input {C}, kernel {weight.shape}, groups {groups}")
    Lout = conv_output_length(L, K, stride, padding)
    if Lout < 1:
        raise ValueError(f"conv1d output length {Lout} < 1 (L={L}, K={K}, stride={stride}, pad={padding})")
    G, Og = groups, O // groups
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, K, axis=2)[:, :, : stride * (Lout - 1) + 1 : stride, :]  # B,C,Lout,K

    depthwise = Cg == 1 and Og == 1
    if depthwise:
        w2 = weight.data[:, 0, :]  # C,K
        out = np.einsum("bclk,ck->bcl", windows, w2, optimize=True)
    elif G == 1:
        cols = windows.transpose(0, 2, 1, 3).reshape(B * Lout, C * K)
        out = (cols @ weight.data.reshape(O, C * K).T).reshape(B, Lout, O).transpose(0, 2, 1)
    else:
        cols = windows.reshape(B, G, Cg, Lout, K).transpose(0, 1, 3, 2, 4).reshape(B, G, Lout, Cg * K)
        wg = weight.data.reshape(G, Og, Cg * K).transpose(0, 2, 1)
        out = (cols @ wg).transpose(0, 1, 3, 2).reshape(B, O, Lout)
    if bias is not None:
        out = out + bias.data[None, :, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2)))
        if depthwise:
            if weight.requires_grad:
                _accumulate(weight, np.einsum("bcl,bclk->ck", g, windows, optimize=True)[:, None, :])
            dwin = g[..., None] * w2[None, :, None, :]  # B,C,Lout,K
        elif G == 1:
            g2 = g.transpose(0, 2, 1).reshape(B * Lout, O)
            if weight.requires_grad:
                _accumulate(weight, (g2.T @ cols).reshape(O, C, K))
            dwin = (g2 @ weight.data.reshape(O, C * K)).reshape(B, Lout, C, K).transpose(0, 2, 1, 3)
        else:
            gg = g.reshape(B, G, Og, Lout).transpose(0, 1, 3, 2)  # B,G,Lout,Og
            if weight.requires_grad:
                dw = np.einsum("bglo,bglk->gok", gg, cols, optimize=True)
                _accumulate(weight, dw.reshape(O, Cg, K))
            dcols = gg @ wg.transpose(0, 2, 1)  # B,G,Lout,Cg*K
            dwin = dcols.reshape(B, G, Lout, Cg, K).transpose(0, 1, 3, 2, 4).reshape(B, C, Lout, K)
        if x.requires_grad:
            dxp = np.zeros((B, C, L + 2 * padding))
            span = stride * (Lout - 1) + 1
            for k in range(K):
                dxp[:, :, k : k + span : stride] += dwin[..., k]
            _accumulate(x, dxp[:, :, padding : padding + L] if padding else dxp)

    return _make(out, parents, backward)


def max_pool1d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    stride = stride or kernel
    B, C, L = x.shape
    Lout = conv_output_length(L, kernel, stride)
    if Lout < 1:
        raise ValueError(f"max_pool1d output length {Lout} < 1 (L={L}, kernel={kernel})")
    windows = sliding_window_view(x.data, kernel, axis=2)[:, :, : stride * (Lout - 1) + 1 : stride, :]
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dx = np.zeros_like(x.data)
        span = stride * (Lout - 1) + 1
        for k in range(kernel):
            dx[:, :, k : k + span : stride] += g * (arg == k)
        _accumulate(x, dx)

    return _make(out, (x,), backward)


def avg_pool1d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    stride = stride or kernel
    B, C, L = x.shape
    Lout = conv_output_length(L, kernel, stride)
    if Lout < 1:
        raise ValueError(f"avg_pool1d output length {Lout} < 1 (L={L}, kernel={kernel})")
    windows = sliding_window_view(x.data, kernel, axis=2)[:, :, : stride * (Lout - 1) + 1 : stride, :]

    def backward(g):
        dx = np.zeros_like(x.data)
        span = stride * (Lout - 1) + 1
        for k in range(kernel):
            dx[:, :, k : k + span : stride] += g / kernel
        _accumulate(x, dx)

    return _make(windows.mean(axis=-1), (x,), backward)


def global_avg_pool1d(x: Tensor) -> Tensor:
    """B x C x L -> B x C."""
    L = x.shape[-1]

    def backward(g):
        _accumulate(x, np.repeat(g[..., None] / L, L, axis=-1))

    return _make(x.data.mean(axis=-1), (x,), backward)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def backward(g):
        _accumulate(gamma, (g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        _accumulate(beta, g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            _accumulate(x, dx)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                                 return_weights: bool = False):
    """Multi-head scaled dot-product attention without projections.

    q, k, v: B x T x D; D must be divisible by ``heads``.  Returns B x T x D
    with the heads concatenated along the last axis.
    """
    B, T, D = q.shape
    if D % heads:
        raise ValueError(f"model width {D} not divisible by {heads} heads")
    dh = D // heads

    def split(t: Tensor) -> Tensor:
        return transpose(reshape(t, (B, t.shape[1], heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    scores = matmul(qh, transpose(kh, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    weights = softmax(scores, axis=-1)  # B,H,T,S
    out = matmul(weights, vh)
    out = reshape(transpose(out, (0, 2, 1, 3)), (B, T, D))
    return (out, weights) if return_weights else out


def positional_encoding(length: int, width: int) -> np.ndarray:
    """Sinusoidal T x D table: even dims sin, odd dims cos, base 10000."""
    if length < 1 or width < 1:
        raise ValueError("positional_encoding needs length, width >= 1")
    position = np.arange(length, dtype=np.float64)[:, None]
    pair = np.arange(0, width, 2, dtype=np.float64)
    freq = np.exp(-np.log(10000.0) * pair / width)
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(position * freq)
    table[:, 1::2] = np.cos(position * freq[: width // 2])
    return table


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy, stable form max(z,0) - z*y + log1p(exp(-|z|))."""
    logits = as_tensor(logits)
    z = logits.data.reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if z.shape != y.shape:
        raise ValueError(f"{z.size} logits vs {y.size} labels")
    n = z.size
    loss = np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z))))

    def backward(g):
        _accumulate(logits, (g * (_sigmoid(z) - y) / n).reshape(logits.shape))

    return _make(np.asarray(loss), (logits,), backward)
