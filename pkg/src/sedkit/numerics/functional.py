"""Differentiable neural-network primitives built on :mod:`._array`."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from ._array import Array, as_array, make, matmul, unbroadcast

ACTIVATIONS = ("sigmoid", "tanh", "swish", "relu", "glu", "softmax_lastdim", "softplus")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so no overflow for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid(x: Array) -> Array:
    out = _sigmoid(x.data)
    return make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Array) -> Array:
    out = np.tanh(x.data)
    return make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x: Array) -> Array:
    mask = x.data > 0
    return make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def swish(x: Array) -> Array:
    s = _sigmoid(x.data)
    out = x.data * s

    def bw(g):
        return (g * (s + out * (1.0 - s)),)

    return make(out, (x,), bw, "swish")


def softplus(x: Array) -> Array:
    """log(1 + e^x) in the overflow-free form max(x, 0) + log1p(e^-|x|)."""
    d = x.data
    out = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))
    s = _sigmoid(d)
    return make(out, (x,), lambda g: (g * s,), "softplus")


def glu(x: Array) -> Array:
    """Gated linear unit: first half of the last axis gated by the second."""
    n = x.shape[-1]
    if n % 2:
        raise ShapeError(f"glu needs an even last extent, got {n}")
    a, b = x.data[..., : n // 2], x.data[..., n // 2 :]
    s = _sigmoid(b)

    def bw(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=-1),)

    return make(a * s, (x,), bw, "glu")


def softmax(x: Array) -> Array:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make(out, (x,), bw, "softmax")


_DISPATCH = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "swish": swish,
    "relu": relu,
    "glu": glu,
    "softmax_lastdim": softmax,
    "softplus": softplus,
}


def activation(x: Array, kind: str) -> Array:
    try:
        fn = _DISPATCH[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}") from None
    return fn(as_array(x))


def layer_norm(x: Array, gamma: Array, beta: Array, eps: float = 1e-5) -> Array:
    """Normalise over the last axis, then apply ``gamma * xhat + beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last extent {d}")
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make(out.astype(x.dtype, copy=False), (x, gamma, beta), bw, "layer_norm")


def output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    """Number of sliding-window positions along one axis."""
    if kernel > length + 2 * padding:
        raise ShapeError(f"kernel {kernel} exceeds padded input length {length + 2 * padding}")
    return (length + 2 * padding - kernel) // stride + 1


def conv2d(x: Array, kernel: Array, stride: int = 1, padding: int = 0) -> Array:
    """2-D cross-correlation in channels-last layout.

    x: (B, H, W, C_in); kernel: (kh, kw, C_in, C_out) -> (B, H', W', C_out).
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects (B,H,W,C) input and (kh,kw,Cin,Cout) kernel, got {x.shape}, {kernel.shape}")
    B, H, W, C = x.shape
    kh, kw, cin, cout = kernel.shape
    if cin != C:
        raise ShapeError(f"conv2d channel mismatch: input has {C}, kernel expects {cin}")
    Ho = output_length(H, kh, stride, padding)
    Wo = output_length(W, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    windows = [
        (i, j, np.s_[:, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride, :])
        for i in range(kh)
        for j in range(kw)
    ]
    cols = np.stack([xp[s] for _, _, s in windows], axis=3).reshape(B * Ho * Wo, kh * kw * C)
    wmat = kernel.data.reshape(kh * kw * C, cout)
    out = (cols @ wmat).reshape(B, Ho, Wo, cout)

    def bw(g):
        g2 = g.reshape(B * Ho * Wo, cout)
        gk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(B, Ho, Wo, kh * kw, C)
            gxp = np.zeros_like(xp)
            for n, (_, _, s) in enumerate(windows):
                gxp[s] += gcols[:, :, :, n, :]
            gx = gxp[:, padding : padding + H, padding : padding + W, :] if padding else gxp
        return gx, gk

    return make(out, (x, kernel), bw, "conv2d")


def depthwise_conv1d(x: Array, kernel: Array, stride: int = 1, padding: int = 0) -> Array:
    """One kernel per channel along the time axis.

    x: (..., T, C); kernel: (K, C) -> (..., T', C).
    """
    if kernel.ndim != 2 or kernel.shape[1] != x.shape[-1]:
        raise ShapeError(f"depthwise kernel {kernel.shape} does not match input channels {x.shape[-1]}")
    K = kernel.shape[0]
    T = x.shape[-2]
    To = output_length(T, K, stride, padding)
    widths = [(0, 0)] * (x.ndim - 2) + [(padding, padding), (0, 0)]
    xp = np.pad(x.data, widths) if padding else x.data
    taps = [np.s_[..., k : k + stride * (To - 1) + 1 : stride, :] for k in range(K)]
    out = sum(xp[s] * kernel.data[k] for k, s in enumerate(taps))

    def bw(g):
        gk = gx = None
        if kernel.requires_grad:
            lead = tuple(range(g.ndim - 1))
            gk = np.stack([(g * xp[s]).sum(axis=lead) for s in taps])
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k, s in enumerate(taps):
                gxp[s] += g * kernel.data[k]
            gx = gxp[..., padding : padding + T, :] if padding else gxp
        return gx, gk

    return make(np.asarray(out), (x, kernel), bw, "depthwise_conv1d")


def pointwise_conv1d(x: Array, kernel: Array) -> Array:
    """Kernel-size-1 convolution mixing channels: (..., T, Cin) x (Cin, Cout)."""
    if kernel.ndim != 2 or kernel.shape[0] != x.shape[-1]:
        raise ShapeError(f"pointwise kernel {kernel.shape} does not match input channels {x.shape[-1]}")
    return matmul(x, kernel)


def convolution(x, kernel, mode: str, stride: int = 1, padding: int = 0) -> Array:
    """Dispatch to one of ``conv2d``, ``depthwise1d`` or ``pointwise1d``.

    A rank-1 input with a rank-1 kernel is treated as a single-channel
    depthwise signal.
    """
    x, kernel = as_array(x), as_array(kernel)
    if stride < 1 or padding < 0:
        raise ConfigError(f"invalid stride={stride} / padding={padding}")
    if mode == "conv2d":
        return conv2d(x, kernel, stride, padding)
    if mode == "depthwise1d":
        if x.ndim == 1 and kernel.ndim == 1:
            out = depthwise_conv1d(x.reshape(-1, 1), kernel.reshape(-1, 1), stride, padding)
            return out.reshape(-1)
        return depthwise_conv1d(x, kernel, stride, padding)
    if mode == "pointwise1d":
        if stride != 1 or padding != 0:
            raise ConfigError("pointwise1d supports stride 1 and no padding only")
        return pointwise_conv1d(x, kernel)
    raise ConfigError(f"unknown convolution mode {mode!r}")


def dropout(x: Array, p: float, training: bool, rng: np.random.Generator | None = None) -> Array:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval is identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a seeded generator")
    scale = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def linear(x: Array, weight: Array, bias: Array | None = None) -> Array:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def binary_cross_entropy_terms(logits: Array, targets: np.ndarray) -> Array:
    """Per-entry -log p_t with p_t = sigmoid((2y-1) * logit), overflow-free."""
    sign = (2.0 * np.asarray(targets, dtype=logits.dtype) - 1.0)
    z = logits.data * sign
    out = np.maximum(-z, 0) + np.log1p(np.exp(-np.abs(z)))
    s = _sigmoid(-z)

    def bw(g):
        return (unbroadcast(-g * s * sign, logits.shape),)

    return make(out, (logits,), bw, "bce_terms")


def lstm_recurrence(xw: Array, w_hh: Array, reverse: bool = False) -> Array:
    """Run an LSTM cell over time given precomputed input projections.

    xw: (B, T, 4h) = x @ W_ih + bias, gate blocks ordered [input, forget,
    output, candidate]; w_hh: (h, 4h). Returns hidden states (B, T, h), with
    state zero-initialised at the first processed step (the last frame when
    ``reverse``).
    """
    if xw.ndim != 3:
        raise ShapeError(f"lstm input projections must be (B, T, 4h), got {xw.shape}")
    B, T, four_h = xw.shape
    h = w_hh.shape[0]
    if four_h != 4 * h or w_hh.shape != (h, 4 * h):
        raise ShapeError(f"lstm recurrent weight {w_hh.shape} incompatible with gate projections {xw.shape}")
    steps = range(T - 1, -1, -1) if reverse else range(T)
    dt = xw.dtype
    hs = np.zeros((B, T, h), dtype=dt)
    cs = np.zeros((B, T, h), dtype=dt)
    gates = np.zeros((B, T, 4 * h), dtype=dt)
    h_prev = np.zeros((B, h), dtype=dt)
    c_prev = np.zeros((B, h), dtype=dt)
    for t in steps:
        z = xw.data[:, t] + h_prev @ w_hh.data
        g = np.empty_like(z)
        g[:, : 3 * h] = _sigmoid(z[:, : 3 * h])
        g[:, 3 * h :] = np.tanh(z[:, 3 * h :])
        c_prev = g[:, h : 2 * h] * c_prev + g[:, :h] * g[:, 3 * h :]
        h_prev = g[:, 2 * h : 3 * h] * np.tanh(c_prev)
        gates[:, t], cs[:, t], hs[:, t] = g, c_prev, h_prev
    order = list(steps)

    def bw(g_out):
        dxw = np.zeros_like(xw.data)
        dw = np.zeros_like(w_hh.data)
        dh_next = np.zeros((B, h), dtype=dt)
        dc_next = np.zeros((B, h), dtype=dt)
        for n in range(T - 1, -1, -1):
            t = order[n]
            gi, gf, go, gg = (gates[:, t, k * h : (k + 1) * h] for k in range(4))
            tc = np.tanh(cs[:, t])
            if n > 0:
                prev = order[n - 1]
                c_before, h_before = cs[:, prev], hs[:, prev]
            else:
                c_before = h_before = None
            dh = g_out[:, t] + dh_next
            dc = dh * go * (1.0 - tc * tc) + dc_next
            dz = np.concatenate(
                [
                    dc * gg * gi * (1.0 - gi),
                    (dc * c_before * gf * (1.0 - gf)) if c_before is not None else np.zeros_like(dc),
                    dh * tc * go * (1.0 - go),
                    dc * gi * (1.0 - gg * gg),
                ],
                axis=1,
            )
            dxw[:, t] = dz
            dc_next = dc * gf
            if h_before is not None:
                dw += h_before.T @ dz
            dh_next = dz @ w_hh.data.T
        return dxw, dw

    return make(hs, (xw, w_hh), bw, "lstm_recurrence")
