"""Pure-numpy reference implementation of the verifier kernels.

Semantics are identical to the compiled _corex module; the compiled one
only removes per-call overhead, which dominates on the tiny layers the
branch-and-bound engine propagates thousands of times.
"""

import numpy as np

BACKEND = "numpy"


def stack_interval(wpos, wneg, biases, relu_flags, lo, hi):
    """Propagate a box through affine(+ReLU) layers.

    Affine bounds use the positive/negative weight split, which is exact
    for a single affine layer on a box. ReLU clamps both bounds at zero.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    for wp, wn, b, r in zip(wpos, wneg, biases, relu_flags):
        lo, hi = wp @ lo + wn @ hi + b, wp @ hi + wn @ lo + b
        if r:
            np.maximum(lo, 0.0, out=lo)
            np.maximum(hi, 0.0, out=hi)
    return lo, hi


def stack_point(weights, biases, relu_flags, x):
    """Exact forward pass of a single vector through the layer stack."""
    y = np.asarray(x, dtype=np.float64)
    for w, b, r in zip(weights, biases, relu_flags):
        y = w @ y + b
        if r:
            np.maximum(y, 0.0, out=y)
    return y


def stack_points(weights, biases, relu_flags, x):
    """Batched exact forward pass; rows are independent inputs."""
    y = np.asarray(x, dtype=np.float64)
    for w, b, r in zip(weights, biases, relu_flags):
        y = y @ w.T + b
        if r:
            np.maximum(y, 0.0, out=y)
    return y


def stack_margins(weights, biases, relu_flags, x, target):
    """Forward pass plus argmax margin y_target - max(other logits)."""
    y = stack_points(weights, biases, relu_flags, x)
    masked = y.copy()
    masked[:, target] = -np.inf
    return y[:, target] - masked.max(axis=1)
