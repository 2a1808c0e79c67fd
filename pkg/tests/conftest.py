"""Shared test utilities: independent finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np


def finite_difference(loss_fn, value, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central-difference gradient of ``loss_fn()`` w.r.t. entries of ``value.data``.

    ``loss_fn`` must re-run the forward pass from scratch each call.  Returns a
    dense array shaped like ``value.data``; when ``indices`` is given only those
    flat positions are probed (the rest stay zero).
    """
    flat = value.data.reshape(-1)
    grad = np.zeros_like(flat)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        original = flat[i]
        flat[i] = original + eps
        hi = float(loss_fn())
        flat[i] = original - eps
        lo = float(loss_fn())
        flat[i] = original
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(value.data.shape)


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray, indices=None) -> float:
    """Worst relative disagreement over the probed entries.

    Entries below 1e-5 in both gradients sit at the roundoff floor of a
    1e-5-step central difference, so they are held to an absolute 1e-6
    agreement instead of a relative one.
    """
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    probe = range(a.size) if indices is None else indices
    worst = 0.0
    for i in probe:
        if abs(a[i]) < 1e-5 and abs(n[i]) < 1e-5:
            if abs(a[i] - n[i]) > 1e-6:
                worst = max(worst, 1.0)
            continue
        err = abs(a[i] - n[i]) / max(abs(a[i]), abs(n[i]))
        worst = max(worst, err)
    return worst
