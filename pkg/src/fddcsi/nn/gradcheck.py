"""Central finite-difference verification of backward passes."""

from __future__ import annotations

import numpy as np

from .model import ModelSpec, backward, forward, init_model


def gradient_check(
    spec: ModelSpec,
    training: bool = True,
    batch: int = 3,
    eps: float = 1e-6,
    max_entries: int = 30,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and numerical gradients.

    Runs in float64 with a random linear functional of the outputs as the
    loss. Parameters are perturbed away from their initial values so that
    zero biases or unit gains do not hide errors. Up to ``max_entries``
    entries of every parameter and input tensor are probed. The relative
    error floor scales with the largest analytic gradient, so entries whose
    true gradient is zero (a bias feeding batch norm) compare against
    finite-difference roundoff rather than against themselves.
    """
    rng = np.random.default_rng(seed)
    model = init_model(spec, dtype=np.float64)
    for k in model.params:
        model.params[k] = model.params[k] + 0.1 * rng.standard_normal(model.params[k].shape)
    xs = {k: rng.standard_normal((batch,) + s) for k, s in spec.inputs.items()}

    def outputs():
        out, cache = forward(model, xs, training)
        return (out if isinstance(out, dict) else {spec.outputs[0]: out}), cache

    out, cache = outputs()
    weights = {k: rng.standard_normal(v.shape) for k, v in out.items()}

    def loss():
        o, _ = outputs()
        return sum(float(np.sum(o[k] * weights[k])) for k in o)

    grads = weights if len(weights) > 1 else weights[spec.outputs[0]]
    pgrads, igrads = backward(model, cache, grads)
    tensors = [(model.params[k], pgrads[k]) for k in model.params]
    tensors += [(xs[k], igrads[k]) for k in xs]
    floor = 1e-6 * max(1.0, max(float(np.max(np.abs(g))) for _, g in tensors))
    worst = 0.0
    for value, grad in tensors:
        flat = value.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in rng.choice(flat.size, min(flat.size, max_entries), replace=False):
            old = flat[idx]
            flat[idx] = old + eps
            lp = loss()
            flat[idx] = old - eps
            lm = loss()
            flat[idx] = old
            num = (lp - lm) / (2 * eps)
            rel = abs(num - gflat[idx]) / max(abs(num), abs(gflat[idx]), floor)
            worst = max(worst, rel)
    return worst


def layer_check_specs() -> dict[str, tuple[ModelSpec, bool]]:
    """One small graph per layer kind (plus tied and eval-mode variants)."""
    from .model import GraphBuilder

    specs = {}

    def add(name, inputs, build, training=True):
        g = GraphBuilder(inputs, seed=1)
        specs[name] = (g.build(build(g)), training)

    add("conv2d_expand", {"x": (3, 5, 4)}, lambda g: g.conv2d("x", 3, 4))
    add("conv2d_contract", {"x": (4, 5, 4)}, lambda g: g.conv2d("x", 4, 2))
    add("dense", {"x": (6,)}, lambda g: g.dense("x", 6, 3))
    add("batch_norm_train", {"x": (3, 5, 4)}, lambda g: g.batch_norm("x", 3))
    add("batch_norm_eval", {"x": (3, 5, 4)}, lambda g: g.batch_norm("x", 3), training=False)
    add("batch_norm_dense", {"x": (5,)}, lambda g: g.batch_norm("x", 5))
    add("leaky_relu", {"x": (2, 3, 3)}, lambda g: g.leaky_relu("x"))
    add("sigmoid", {"x": (2, 3, 3)}, lambda g: g.sigmoid("x"))
    add("tanh", {"x": (2, 3, 3)}, lambda g: g.tanh("x"))
    add("reshape", {"x": (2, 3, 3)}, lambda g: g.reshape("x", (18,)))
    add("concat", {"x": (2, 3, 3), "y": (1, 3, 3)}, lambda g: g.concat(["x", "y"]))
    add("residual_add", {"x": (2, 3, 3), "y": (2, 3, 3)}, lambda g: g.residual_add(["x", "y"]))
    add("channel_slice", {"x": (4, 3, 3)}, lambda g: g.channel_slice("x", 1, 3))
    add("recurrent_cell", {"x": (2, 3, 3), "s": (8, 3, 3)}, lambda g: g.recurrent_cell("x", "s", 2, 4))
    add("recurrent_cell_first", {"x": (2, 3, 3)}, lambda g: g.recurrent_cell("x", None, 2, 4))

    def tied(g):
        h = g.recurrent_cell("x", None, 2, 4)
        return g.recurrent_cell("x", h, 2, 4, tie=h)

    add("recurrent_cell_tied", {"x": (2, 3, 3)}, tied)
    return specs
