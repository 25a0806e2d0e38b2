"""Central finite-difference check of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .layers import wce_loss
from .model import ModelState, PARAM_NAMES, forward, loss_and_grads


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    # coordinates whose +/- step changed a ReLU mask or pooling argmax
    kink_skips: int

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(state: ModelState, x: np.ndarray, y, weights=None, *, step: float = 1e-5,
               n_params: int = 200, seed: int = 0, oracle_dtype=np.float64,
               grad_transform: Callable[[dict], dict] | None = None) -> GradCheckResult:
    """Max relative error between analytic and numeric gradients.

    Analytic gradients are computed at the state's own precision; the
    central differences run on an ``oracle_dtype`` copy (None keeps the
    state's precision).  Coordinates are spread evenly across all parameter
    tensors.  relative error = |a - n| / max(|a|, |n|, 1e-8).

    A difference is only valid if both evaluations share one linear piece of
    the network, so coordinates whose perturbation flips any ReLU mask or
    pooling argmax are replaced by fresh draws.
    """
    if len(x) > 4:
        raise ValueError("grad_check expects a batch of at most 4 samples")
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grads(state, x, y, weights)
    if grad_transform is not None:
        grads = grad_transform(grads)
    oracle = state.astype(oracle_dtype) if oracle_dtype is not None else state.copy()
    xo = np.asarray(x).astype(oracle.dtype)
    quota = _quotas({k: oracle.params[k].size for k in PARAM_NAMES}, n_params)
    worst, checked, skipped = 0.0, 0, 0
    for name in PARAM_NAMES:
        flat = oracle.params[name].reshape(-1)
        order = rng.permutation(flat.size)
        want = quota[name]
        done = 0
        for i in order:
            if done == want:
                break
            orig = flat[i].copy()
            flat[i] = orig + step
            lp, kp = _loss_and_pattern(oracle, xo, y, weights)
            flat[i] = orig - step
            lm, km = _loss_and_pattern(oracle, xo, y, weights)
            flat[i] = orig
            if kp != km:
                skipped += 1
                continue
            numeric = (lp - lm) / (2 * step)
            analytic = float(grads[name].reshape(-1)[i])
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
            done += 1
        checked += done
    return GradCheckResult(worst, checked, skipped)


def _quotas(sizes: dict[str, int], total: int) -> dict[str, int]:
    """Even split of ``total`` coordinates; small tensors pass their leftover on."""
    out, left = {}, total
    ordered = sorted(sizes, key=lambda k: sizes[k])
    for j, name in enumerate(ordered):
        share = -(-left // (len(ordered) - j))
        out[name] = min(sizes[name], share)
        left -= out[name]
    return out


def _loss_and_pattern(state, x, y, weights) -> tuple[float, bytes]:
    logits, cache = forward(state, x)
    _, r1m, p1c, _, r2m, p2c, _, _, hm, _ = cache
    pattern = b"".join((np.packbits(r1m).tobytes(), np.packbits(r2m).tobytes(), np.packbits(hm).tobytes(),
                        p1c[1].astype(np.uint8).tobytes(), p2c[1].astype(np.uint8).tobytes()))
    return wce_loss(logits, y, weights)[0], pattern


def flip_sign(name: str = "conv1.weight") -> Callable[[dict], dict]:
    """Fault injection: negate one parameter's gradient."""
    def transform(grads: dict) -> dict:
        return {**grads, name: -grads[name]}
    return transform
