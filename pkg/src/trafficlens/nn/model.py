"""LeNet-5-style classifier for 28x28 single-channel traffic images.

    conv1 32@5x5 pad 2 -> relu -> pool   32x28x28 -> 32x14x14
    conv2 64@5x5 pad 0 -> relu -> pool   64x10x10 -> 64x5x5
    fc1 1600 -> 512 -> relu
    fc2  512 -> N
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from . import layers as L

PARAM_NAMES = (
    "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
    "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias",
)


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int
    in_side: int = 28
    conv1_filters: int = 32
    conv2_filters: int = 64
    kernel: int = 5
    conv1_pad: int = 2
    conv2_pad: int = 0
    hidden: int = 512

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")

    @property
    def flat_features(self) -> int:
        s = (self.in_side + 2 * self.conv1_pad - self.kernel + 1) // 2
        s = (s + 2 * self.conv2_pad - self.kernel + 1) // 2
        return self.conv2_filters * s * s

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel
        return {
            "conv1.weight": (self.conv1_filters, 1, k, k),
            "conv1.bias": (self.conv1_filters,),
            "conv2.weight": (self.conv2_filters, self.conv1_filters, k, k),
            "conv2.bias": (self.conv2_filters,),
            "fc1.weight": (self.hidden, self.flat_features),
            "fc1.bias": (self.hidden,),
            "fc2.weight": (self.n_classes, self.hidden),
            "fc2.bias": (self.n_classes,),
        }


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState = field(default=None)

    def __post_init__(self):
        if self.adam is None:
            self.adam = AdamState({k: np.zeros_like(p) for k, p in self.params.items()},
                                  {k: np.zeros_like(p) for k, p in self.params.items()})

    @property
    def dtype(self):
        return self.params["conv1.weight"].dtype

    def astype(self, dtype) -> "ModelState":
        """Copy in another precision (float64 is the gradient-verification mode)."""
        cast = lambda d: {k: v.astype(dtype) for k, v in d.items()}
        return ModelState(self.config, cast(self.params), AdamState(cast(self.adam.m), cast(self.adam.v), self.adam.t))

    def copy(self) -> "ModelState":
        return self.astype(self.dtype)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelState:
    """He-uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = math.sqrt(6.0 / he_fan_in(shape))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelState(cfg, params)


def he_fan_in(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape[1:]))


def _check_input(state: ModelState, x: np.ndarray) -> np.ndarray:
    side = state.config.in_side
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (1, side, side):
        raise ShapeMismatch(f"expected input (B, 1, {side}, {side}), got {x.shape}")
    return x.astype(state.dtype, copy=False)


def forward(state: ModelState, x: np.ndarray, *, trace: list | None = None):
    """Logits (B, N) and the cache for :func:`backward`.

    With ``trace`` a list, per-sample output shapes of each table row are appended.
    """
    p, cfg = state.params, state.config
    x = _check_input(state, x)
    c1, c1c = L.conv2d_forward(x, p["conv1.weight"], p["conv1.bias"], pad=cfg.conv1_pad)
    r1, r1m = L.relu_forward(c1)
    p1, p1c = L.maxpool2_forward(r1)
    c2, c2c = L.conv2d_forward(p1, p["conv2.weight"], p["conv2.bias"], pad=cfg.conv2_pad)
    r2, r2m = L.relu_forward(c2)
    p2, p2c = L.maxpool2_forward(r2)
    flat = p2.reshape(p2.shape[0], -1)
    h, hc = L.dense_forward(flat, p["fc1.weight"], p["fc1.bias"])
    hr, hm = L.relu_forward(h)
    logits, oc = L.dense_forward(hr, p["fc2.weight"], p["fc2.bias"])
    if trace is not None:
        trace.extend(t.shape[1:] for t in (r1, p1, r2, p2, hr, logits))
    return logits, (c1c, r1m, p1c, c2c, r2m, p2c, p2.shape, hc, hm, oc)


def backward(state: ModelState, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    c1c, r1m, p1c, c2c, r2m, p2c, p2_shape, hc, hm, oc = cache
    g = {}
    dh, g["fc2.weight"], g["fc2.bias"] = L.dense_backward(dlogits, oc)
    dh = L.relu_backward(dh, hm)
    dflat, g["fc1.weight"], g["fc1.bias"] = L.dense_backward(dh, hc)
    d = L.maxpool2_backward(dflat.reshape(p2_shape), p2c)
    d = L.relu_backward(d, r2m)
    d, g["conv2.weight"], g["conv2.bias"] = L.conv2d_backward(d, c2c)
    d = L.maxpool2_backward(d, p1c)
    d = L.relu_backward(d, r1m)
    _, g["conv1.weight"], g["conv1.bias"] = L.conv2d_backward(d, c1c, need_dx=False)
    return {k: g[k] for k in PARAM_NAMES}


def loss_and_grads(state: ModelState, x: np.ndarray, y, weights=None) -> tuple[float, dict[str, np.ndarray]]:
    logits, cache = forward(state, x)
    loss, dlogits = L.wce_loss(logits, y, weights)
    return loss, backward(state, cache, dlogits)


def adam_step(state: ModelState, grads: dict[str, np.ndarray], lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ModelState:
    """One bias-corrected Adam update, in place; returns ``state``."""
    for k, p in state.params.items():
        if grads[k].shape != p.shape:
            raise ShapeMismatch(f"gradient for {k} has shape {grads[k].shape}, parameter {p.shape}")
    a = state.adam
    a.t += 1
    c1 = 1.0 - beta1 ** a.t
    c2 = 1.0 - beta2 ** a.t
    for k, p in state.params.items():
        g = grads[k].astype(p.dtype, copy=False)
        m, v = a.m[k], a.v[k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return state


def predict(state: ModelState, x: np.ndarray, batch_size: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Logits and argmax classes (lowest index wins ties)."""
    x = _check_input(state, np.asarray(x))
    outs = [forward(state, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    logits = np.concatenate(outs) if outs else np.zeros((0, state.config.n_classes), dtype=state.dtype)
    return logits, logits.argmax(axis=1)


def layer_shapes(state: ModelState) -> list[tuple[int, ...]]:
    """Output shape after each row of the architecture table, for one zero image."""
    trace: list = []
    side = state.config.in_side
    forward(state, np.zeros((1, 1, side, side), dtype=state.dtype), trace=trace)
    return trace
