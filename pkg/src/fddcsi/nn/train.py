"""Adam and the mini-batch MSE training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import ModelSpec, TrainedModel, backward, forward, init_model, predict

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    c1 = 1 - beta1**state.t
    c2 = 1 - beta2**state.t
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        params[k] -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(params[k].dtype)
    return params, state


@dataclass
class Schedule:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 20
    min_delta: float = 0.0
    lr_decay_at: tuple[float, ...] = ()


def mse_loss(outputs, targets) -> tuple[float, dict]:
    """Sum over outputs of the per-output mean squared error, and its gradients."""
    if not isinstance(outputs, Mapping):
        outputs, targets = {"_": outputs}, {"_": targets}
    loss, grads = 0.0, {}
    for k, y in outputs.items():
        diff = y - targets[k]
        loss += float(np.mean(diff.astype(np.float64) ** 2))
        grads[k] = (2.0 / diff.size) * diff
    if "_" in grads:
        return loss, grads["_"]
    return loss, grads


def _named(model: TrainedModel, arrays, names) -> dict:
    if isinstance(arrays, Mapping):
        return {k: np.asarray(arrays[k], dtype=model.dtype) for k in names}
    if len(names) != 1:
        raise ValueError(f"expected a dict keyed by {names}")
    return {names[0]: np.asarray(arrays, dtype=model.dtype)}


def evaluate_loss(model: TrainedModel, inputs, targets, batch_size: int = 256) -> float:
    inputs = _named(model, inputs, list(model.spec.inputs))
    targets = _named(model, targets, model.spec.outputs)
    pred = predict(model, inputs, batch_size)
    if not isinstance(pred, dict):
        pred = {model.spec.outputs[0]: pred}
    return mse_loss(pred, targets)[0]


def train(
    spec: ModelSpec | TrainedModel,
    train_data: tuple,
    val_data: tuple | None = None,
    schedule: Schedule | None = None,
    seed: int = 0,
) -> TrainedModel:
    """Epoch-shuffled mini-batch Adam on MSE.

    ``train_data`` and ``val_data`` are ``(inputs, targets)`` pairs of arrays
    (or dicts keyed by input/output node). With validation data the best
    validation epoch is kept and training stops after ``patience`` epochs
    without improvement.
    """
    schedule = schedule or Schedule()
    model = init_model(spec) if isinstance(spec, ModelSpec) else spec.copy()
    if schedule.epochs <= 0:
        return model
    in_names, out_names = list(model.spec.inputs), model.spec.outputs
    x = _named(model, train_data[0], in_names)
    y = _named(model, train_data[1], out_names)
    n = len(next(iter(x.values())))
    if n == 0:
        raise ValueError("empty training set")
    if val_data is not None:
        vx = _named(model, val_data[0], in_names)
        vy = _named(model, val_data[1], out_names)
    rng = np.random.default_rng(seed)
    state = AdamState()
    history, val_history = [], []
    best = (math.inf, None, -1)
    stale = 0
    bs = schedule.batch_size
    decay_epochs = {max(2, int(f * schedule.epochs)) for f in schedule.lr_decay_at}
    lr = schedule.lr
    epoch = 0
    for epoch in range(1, schedule.epochs + 1):
        if epoch in decay_epochs:
            lr *= 0.1
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            if len(idx) < 2 and n >= 2:
                continue
            out, cache = forward(model, {k: v[idx] for k, v in x.items()}, training=True)
            if not isinstance(out, dict):
                out = {out_names[0]: out}
            loss, g = mse_loss(out, {k: v[idx] for k, v in y.items()})
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            pgrads, _ = backward(model, cache, g)
            adam_step(model.params, pgrads, state, lr=lr)
            total += loss * len(idx)
            count += len(idx)
        history.append(total / max(count, 1))
        if val_data is not None:
            vloss = evaluate_loss(model, vx, vy)
            if not math.isfinite(vloss):
                raise TrainingDivergedError(epoch, vloss)
            val_history.append(vloss)
            if vloss < best[0] - schedule.min_delta:
                best = (vloss, model.copy(), epoch)
                stale = 0
            else:
                stale += 1
                if stale >= schedule.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, best[2])
                    break
        log.debug("epoch %d loss %.6g", epoch, history[-1])
    if val_data is not None and best[1] is not None:
        model = best[1]
    model.metadata.update(
        {
            "epochs": epoch,
            "best_epoch": best[2] if val_data is not None else epoch,
            "final_loss": history[-1],
            "loss_curve": history,
            "val_curve": val_history,
            "seed": seed,
        }
    )
    return model
