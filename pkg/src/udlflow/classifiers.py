"""Dense ReLU classifiers: the verification subjects.

Kept deliberately small; the package verifies classifiers, it does not
aim to be a classifier-training library. fit_classifier exists so tests
and benchmarks can produce a classifier whose decision boundary actually
relates to the data the flow models.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .errors import ContractError, DimensionError
from .training import adam_step, clip_global_norm, init_adam_state


class ReluClassifier:
    """Affine layers with ReLU between them (linear last layer)."""

    def __init__(self, sizes, seed: int = 0):
        if len(sizes) < 2:
            raise ContractError("need at least input and output sizes")
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fin, fout in zip(sizes[:-1], sizes[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / fin), size=(fin, fout))
            bound = 1.0 / np.sqrt(fin)
            b = rng.uniform(-bound, bound, size=fout)
            self.weights.append(nm.Tensor(w, requires_grad=True))
            self.biases.append(nm.Tensor(b, requires_grad=True))

    @classmethod
    def from_arrays(cls, weights, biases) -> "ReluClassifier":
        obj = cls.__new__(cls)
        obj.weights = [nm.Tensor(np.asarray(w, dtype=np.float64),
                                 requires_grad=True) for w in weights]
        obj.biases = [nm.Tensor(np.asarray(b, dtype=np.float64),
                                requires_grad=True) for b in biases]
        for i, (w, b) in enumerate(zip(obj.weights, obj.biases)):
            if w.data.ndim != 2 or b.data.shape != (w.data.shape[1],):
                raise DimensionError(f"layer {i}: weight/bias shapes disagree")
        return obj

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self):
        return self.weights + self.biases

    def logits_t(self, x: nm.Tensor) -> nm.Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = nm.matmul(h, w) + b
            if i != last:
                h = nm.relu(h)
        return h

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                np.maximum(h, 0.0, out=h)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def lower(self):
        """(W(out,in), b, relu_after) triples for the verifier."""
        last = len(self.weights) - 1
        return [(w.data.T.copy(), b.data.copy(), i != last)
                for i, (w, b) in enumerate(zip(self.weights, self.biases))]


def fit_classifier(x: np.ndarray, labels: np.ndarray, hidden=(16,),
                   epochs: int = 200, lr: float = 1e-2, batch_size: int = 256,
                   seed: int = 0) -> ReluClassifier:
    """Cross-entropy training with Adam; enough for toy decision boundaries."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.intp)
    n_classes = int(labels.max()) + 1
    clf = ReluClassifier([x.shape[1], *hidden, n_classes], seed=seed)
    params = clf.parameters()
    state = init_adam_state(params)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, order.size, batch_size):
            idx = order[start:start + batch_size]
            xb = nm.Tensor(x[idx])
            logits = clf.logits_t(xb)
            lse = nm.logsumexp(logits, axis=1)
            true = nm.take(logits, np.arange(idx.size) * n_classes + labels[idx])
            loss = nm.tmean(lse - true)
            for p in params:
                p.zero_grad()
            loss.backward()
            grads = clip_global_norm([p.grad for p in params], 100.0)
            adam_step(params, grads, state, lr)
    return clf
