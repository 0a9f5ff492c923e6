"""Maximum-likelihood training of flow models with Adam.

Training differentiates the data-to-latent pass: the loss is the mean
negative log-likelihood plus a squared-magnitude penalty on the LU layer
parameters, which keeps the constant Jacobian determinant bounded.
Early stopping watches validation NLL with a patience counter; the best
parameters are restored at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .errors import ContractError
from .flows import FlowModel

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    patience: int = 3
    batch_size: int = 128
    max_epochs: int = 60
    lu_reg_weight: float = 1e-4
    dequantize: bool = False
    seed: int = 0
    grad_clip: float = 100.0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning rate must be positive")
        if self.patience < 0:
            raise ContractError("patience must be nonnegative")


def veriflow_preset(**overrides) -> TrainConfig:
    """lr 1e-3, patience 3: the default schedule for the full model."""
    return replace(TrainConfig(), **overrides)


def baseline_preset(**overrides) -> TrainConfig:
    """lr 1e-5, patience 10: the slow schedule the coupling-only baseline
    needs to stay stable."""
    return replace(TrainConfig(learning_rate=1e-5, patience=10), **overrides)


# ---------------------------------------------------------------------------
# loss

def nll_loss(flow: FlowModel, batch: np.ndarray,
             lu_reg_weight: float = 0.0) -> nm.Tensor:
    """-(1/n) sum log p(x_i) plus the LU parameter penalty.

    Raises FloatingPointError when the loss value is non-finite so the
    trainer can abort the step with a diagnostic.
    """
    x = nm.Tensor(np.atleast_2d(np.asarray(batch, dtype=np.float64)))
    loss = -nm.tmean(flow.log_prob_t(x))
    if lu_reg_weight > 0.0:
        penalty = None
        for param, mask in flow.lu_reg_terms():
            masked = param * mask if mask is not None else param
            term = nm.tsum(masked * masked)
            penalty = term if penalty is None else penalty + term
        if penalty is not None:
            loss = loss + lu_reg_weight * penalty
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(
            f"non-finite training loss ({loss.data!r}); aborting step")
    return loss


# ---------------------------------------------------------------------------
# optimizer

def init_adam_state(params) -> dict:
    return {"t": 0,
            "m": [np.zeros(p.shape) for p in params],
            "v": [np.zeros(p.shape) for p in params]}


def adam_step(params, grads, state: dict, lr: float) -> dict:
    """One Adam update, beta = (0.9, 0.999), eps = 1e-8.

    grads entries may be None (parameter unreachable from the loss), in
    which case the parameter is left untouched by this step's gradient
    but its moments still decay.
    """
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros(p.shape)
        state["m"][i] = ADAM_BETA1 * state["m"][i] + (1.0 - ADAM_BETA1) * g
        state["v"][i] = ADAM_BETA2 * state["v"][i] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state["m"][i] / c1
        v_hat = state["v"][i] / c2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return state


def clip_global_norm(grads, max_norm: float):
    total = 0.0
    for g in grads:
        if g is not None:
            total += float((g * g).sum())
    total = np.sqrt(total)
    if total > max_norm:
        scale = max_norm / total
        grads = [None if g is None else g * scale for g in grads]
    return grads


# ---------------------------------------------------------------------------
# dequantization

def dequantize(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """(pixel + u) / 256 with u ~ Uniform[0, 1) per component."""
    batch = np.asarray(batch)
    if not np.all(batch == np.round(batch)):
        raise ContractError("dequantize expects integer-valued input")
    if batch.min() < 0 or batch.max() > 255:
        raise ContractError("pixel values must lie in [0, 255]")
    return (batch + rng.uniform(0.0, 1.0, size=batch.shape)) / 256.0


# ---------------------------------------------------------------------------
# training loop

class EarlyStopper:
    """Patience counter on validation NLL.

    update() returns 'improved', 'continue' or 'stop'; 'stop' fires on
    the epoch at which the count of consecutive non-improving epochs
    reaches the patience (so patience 3 with values [3, 2, 2, 2, 2]
    stops after the fifth epoch, index 4)."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.stall = 0

    def update(self, val_nll: float) -> str:
        if val_nll < self.best:
            self.best = val_nll
            self.stall = 0
            return "improved"
        self.stall += 1
        return "stop" if self.stall >= self.patience else "continue"


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    val_nll: float
    log_det: float


@dataclass
class TrainResult:
    flow: FlowModel
    history: list
    best_val_nll: float
    diverged: bool = False
    stopped_epoch: int | None = None


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, s in zip(params, snap):
        p.data = s.copy()


def _mean_nll(flow: FlowModel, x: np.ndarray) -> float:
    return float(-flow.log_prob(x).mean())


def train(flow: FlowModel, data: np.ndarray, config: TrainConfig) -> TrainResult:
    """Fit by NLL descent with early stopping on a held-out split.

    Returns the flow with the best-validation parameters restored; the
    history records one row per epoch (0-indexed). Divergence (non-finite
    validation NLL or an aborted step) stops training and flags the
    result, still restoring the best checkpoint seen.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ContractError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    n = data.shape[0]
    perm = rng.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n))) if n > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        train_idx = val_idx
    val_raw = data[val_idx]
    train_raw = data[train_idx]

    def prepared(batch, batch_rng):
        return dequantize(batch, batch_rng) if config.dequantize else batch

    val_set = prepared(val_raw, rng)

    params = flow.parameters()
    state = init_adam_state(params)
    best = _snapshot(params)
    stopper = EarlyStopper(config.patience)
    stopper.update(_mean_nll(flow, val_set))
    history: list[EpochRecord] = []
    diverged = False
    stopped = None

    for epoch in range(config.max_epochs):
        order = rng.permutation(train_idx.size)
        epoch_losses = []
        aborted = False
        for start in range(0, order.size, config.batch_size):
            batch = prepared(train_raw[order[start:start + config.batch_size]], rng)
            for p in params:
                p.zero_grad()
            try:
                loss = nll_loss(flow, batch, config.lu_reg_weight)
            except FloatingPointError:
                aborted = True
                break
            loss.backward()
            grads = clip_global_norm([p.grad for p in params], config.grad_clip)
            adam_step(params, grads, state, config.learning_rate)
            epoch_losses.append(loss.item())
        if aborted:
            diverged = True
            stopped = epoch
            break
        val_nll = _mean_nll(flow, val_set)
        history.append(EpochRecord(
            epoch=epoch,
            train_nll=float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
            val_nll=val_nll,
            log_det=flow.log_det_constant()))
        if not np.isfinite(val_nll):
            diverged = True
            stopped = epoch
            break
        outcome = stopper.update(val_nll)
        if outcome == "improved":
            best = _snapshot(params)
        elif outcome == "stop":
            stopped = epoch
            break

    _restore(params, best)
    return TrainResult(flow=flow, history=history, best_val_nll=stopper.best,
                       diverged=diverged, stopped_epoch=stopped)


def write_history_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_nll,val_nll,log_det\n")
        for rec in history:
            fh.write(f"{rec.epoch},{rec.train_nll!r},{rec.val_nll!r},{rec.log_det!r}\n")
