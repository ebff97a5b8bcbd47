"""Central-difference gradient checking.

The numerical side only ever calls the forward function, so it is independent
of the backward closures it is used to verify.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ._array import Array, backward, precision


def numerical_gradient(
    fn: Callable[[], Array],
    target: Array,
    h: float = 1e-4,
    indices: np.ndarray | None = None,
) -> np.ndarray:
    """d fn() / d target by central differences, perturbing ``target.data`` in place.

    When ``indices`` (flat positions) is given only those entries are
    estimated; the rest of the result is NaN.
    """
    flat = target.data.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    grad = np.full(flat.size, np.nan if indices is not None else 0.0)
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data.sum())
        flat[i] = orig - h
        down = float(fn().data.sum())
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(target.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, scale: float | None = None) -> float:
    """max |a - n| over compared entries, divided by the gradient's magnitude.

    ``scale`` defaults to the larger of the two arrays' max absolute value.
    """
    keep = ~np.isnan(numeric)
    a, n = analytic[keep], numeric[keep]
    if scale is None:
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    return float(np.abs(a - n).max(initial=0.0) / max(scale, 1e-12))


def check_gradients(
    fn: Callable[[], Array],
    inputs: Sequence[Array],
    h: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> dict[int, float]:
    """Compare backprop against central differences for every array in ``inputs``.

    ``fn`` must rebuild the graph from ``inputs`` on every call and return a
    scalar; pass float64 inputs. With ``max_entries`` at most that many
    randomly chosen coordinates per input are differenced, and errors are
    scaled by the input's full analytic gradient. Returns
    ``{position: relative_error}``.
    """
    rng = np.random.default_rng(seed)
    for x in inputs:
        x.grad = None
    with precision(np.float64):
        loss = fn()
        backward(loss)
        errors = {}
        for k, x in enumerate(inputs):
            ana = x.grad if x.grad is not None else np.zeros(x.shape)
            idx = None
            if max_entries is not None and x.size > max_entries:
                idx = rng.choice(x.size, size=max_entries, replace=False)
            num = numerical_gradient(fn, x, h, idx)
            scale = max(np.abs(ana).max(initial=0.0), np.nanmax(np.abs(num), initial=0.0))
            errors[k] = relative_error(ana, num, max(scale, floor))
    return errors
