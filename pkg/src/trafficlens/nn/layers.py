"""Layer primitives with hand-written backward passes.

Arrays are batched: images are (B, C, H, W), dense inputs (B, F).  Each
``*_forward`` returns its output and a cache consumed by ``*_backward``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BadTarget, OddDimension, ShapeMismatch


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (C,H,W) or (B,C,H,W), got shape {x.shape}")
    return x, False


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int = 0, stride: int = 1):
    """Cross-correlation (no kernel flip) plus per-output-channel bias.

    x: (B, C, H, W) or (C, H, W); w: (O, C, K, K); b: (O,).
    """
    x, single = _as_batch(x)
    B, C, H, W = x.shape
    O, Cw, K, K2 = w.shape
    if Cw != C or K != K2 or b.shape != (O,):
        raise ShapeMismatch(f"input {x.shape} incompatible with weights {w.shape} / bias {b.shape}")
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < K or Wp < K:
        raise ShapeMismatch(f"kernel {K} larger than padded input {Hp}x{Wp}")
    Ho, Wo = (Hp - K) // stride + 1, (Wp - K) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (K, K), axis=(2, 3))[:, :, ::stride, ::stride]  # B,C,Ho,Wo,K,K
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * K * K)
    out = cols @ w.reshape(O, -1).T + b
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    cache = (x.shape, cols, w, pad, stride, single)
    out = np.ascontiguousarray(out)
    return (out[0] if single else out), cache


def conv2d_backward(dout: np.ndarray, cache, need_dx: bool = True):
    """Gradients w.r.t. input (None unless ``need_dx``), weights and bias."""
    (B, C, H, W), cols, w, pad, stride, single = cache
    if single:
        dout = dout[None]
    O, _, K, _ = w.shape
    Ho, Wo = dout.shape[2], dout.shape[3]
    dmat = dout.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dmat @ w.reshape(O, -1)).reshape(B, Ho, Wo, C, K, K)
    dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=dout.dtype)
    for i in range(K):
        for j in range(K):
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
    dx = np.ascontiguousarray(dx)
    return (dx[0] if single else dx), dw, db


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling, stride 2. Ties pick the first maximum in row-major window order."""
    x, single = _as_batch(x)
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise OddDimension(f"maxpool2 needs even spatial dims, got {H}x{W}")
    win = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    cache = (x.shape, arg, single)
    return (out[0] if single else out), cache


def maxpool2_backward(dout: np.ndarray, cache) -> np.ndarray:
    (B, C, H, W), arg, single = cache
    if single:
        dout = dout[None]
    dwin = np.zeros((B, C, H // 2, W // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dx = dwin.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
    return dx[0] if single else dx


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = W x + b for each row of x; w is (out, in)."""
    single = x.ndim == 1
    xb = x[None] if single else x
    if xb.ndim != 2 or xb.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"input {x.shape} incompatible with weights {w.shape} / bias {b.shape}")
    out = xb @ w.T + b
    return (out[0] if single else out), (xb, w, single)


def dense_backward(dout: np.ndarray, cache):
    xb, w, single = cache
    d = dout[None] if single else dout
    dx = d @ w
    dw = d.T @ xb
    db = d.sum(axis=0)
    return (dx[0] if single else dx), dw, db


def relu_forward(x: np.ndarray):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Subgradient at 0 is 0."""
    return np.where(mask, dout, 0).astype(dout.dtype, copy=False)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def wce_loss(logits: np.ndarray, targets, weights=None):
    """Weighted cross-entropy averaged over the batch, and its gradient w.r.t. logits.

    loss = (1/B) * sum_b w[y_b] * -log softmax(logits_b)[y_b]
    """
    logits = np.atleast_2d(logits)
    B, N = logits.shape
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    if y.shape != (B,):
        raise ShapeMismatch(f"{B} logit rows but {y.size} targets")
    if y.min(initial=0) < 0 or y.max(initial=0) >= N:
        raise BadTarget(f"targets must lie in [0, {N})")
    w = np.ones(N, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    if w.shape != (N,):
        raise ShapeMismatch(f"{w.size} class weights for {N} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    nll = logsum - z[np.arange(B), y]
    wy = w[y]
    loss = float(np.sum(wy * nll) / B)
    p = np.exp(z - logsum[:, None])
    p[np.arange(B), y] -= 1
    grad = (wy[:, None] * p / B).astype(logits.dtype, copy=False)
    return loss, grad
