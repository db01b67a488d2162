"""Layer kinds: shape rules, initialization, forward and reverse-mode passes.

Every kind works on batched arrays with the batch on axis 0 and channels on
axis 1. Forward returns ``(output, cache)``; backward takes the cache and the
output gradient and returns ``(input_grads, param_grads)``.
"""

from __future__ import annotations

import math

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAKY_SLOPE = 0.3


class LayerKind:
    name: str = ""
    param_names: tuple[str, ...] = ()
    buffer_names: tuple[str, ...] = ()
    min_inputs = 1
    max_inputs = 1

    def out_shape(self, attrs: dict, in_shapes: list[tuple]) -> tuple:
        return in_shapes[0]

    def init(self, attrs: dict, in_shapes: list[tuple], rng: np.random.Generator) -> dict:
        return {}

    def init_buffers(self, attrs: dict) -> dict:
        return {}

    def forward(self, attrs, params, buffers, xs, training):
        raise NotImplementedError

    def backward(self, attrs, params, cache, gy):
        raise NotImplementedError


def _fan_in_uniform(rng, shape, fan_in):
    limit = math.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Conv2d(LayerKind):
    """3x3 convolution, stride 1, zero 'same' padding."""

    name = "conv2d"
    param_names = ("W", "b")

    def out_shape(self, attrs, in_shapes):
        c, h, w = in_shapes[0]
        if c != attrs["in_ch"]:
            raise ValueError(f"conv2d expects {attrs['in_ch']} channels, got {c}")
        return (attrs["out_ch"], h, w)

    def init(self, attrs, in_shapes, rng):
        cin, cout = attrs["in_ch"], attrs["out_ch"]
        return {
            "W": _fan_in_uniform(rng, (cout, cin, 3, 3), 9 * cin),
            "b": np.zeros(cout),
        }

    def forward(self, attrs, params, buffers, xs, training):
        (x,) = xs
        W = params["W"].astype(x.dtype, copy=False)
        y, cols = _conv_same(x, W)
        y += params["b"].astype(x.dtype, copy=False)[None, :, None, None]
        return y, (x, cols)

    def backward(self, attrs, params, cache, gy):
        x, cols = cache
        W = params["W"].astype(gy.dtype, copy=False)
        cout, cin = W.shape[:2]
        # input gradient is a same-padded conv with the flipped, transposed kernel
        gx, _ = _conv_same(gy, W[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        g = _nhwc(gy).reshape(-1, cout)
        if cols is not None:
            gW = (g.T @ cols).reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2)
        else:
            # correlate x against shifted copies of gy (cheaper when gy is thin)
            gcols = _im2col(_pad_nhwc(gy))
            m = (_nhwc(x).reshape(-1, cin).T @ gcols).reshape(cin, 3, 3, cout)
            gW = m[:, ::-1, ::-1, :].transpose(3, 0, 1, 2)
        return [gx], {"W": np.ascontiguousarray(gW), "b": g.sum(axis=0)}


def _nhwc(x):
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _pad_nhwc(x):
    B, C, H, W = x.shape
    xp = np.zeros((B, H + 2, W + 2, C), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x.transpose(0, 2, 3, 1)
    return xp


def _im2col(xp):
    """(B, H+2, W+2, C) padded -> (B*H*W, 9*C) with columns ordered (row tap, col tap, channel)."""
    B, Hp, Wp, C = xp.shape
    H, W = Hp - 2, Wp - 2
    cols = np.empty((B, H, W, 3, 3, C), dtype=xp.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i, j] = xp[:, i : i + H, j : j + W]
    return cols.reshape(B * H * W, 9 * C)


def _conv_same(x, W):
    """3x3 zero-padded convolution of NCHW ``x``; returns ``(y, cols or None)``.

    Works channels-last so every product is a tall-skinny GEMM. Expanding
    layers use im2col; contracting layers multiply first and sum the nine
    shifted tap outputs, which moves far less memory.
    """
    B, C, H, Wd = x.shape
    cout = W.shape[0]
    xp = _pad_nhwc(x)
    if C <= cout:
        cols = _im2col(xp)
        y = cols @ W.transpose(0, 2, 3, 1).reshape(cout, 9 * C).T
        y = y.reshape(B, H, Wd, cout)
    else:
        cols = None
        z = (xp.reshape(-1, C) @ W.transpose(1, 2, 3, 0).reshape(C, 9 * cout)).reshape(B, H + 2, Wd + 2, 3, 3, cout)
        y = np.zeros((B, H, Wd, cout), dtype=x.dtype)
        for i in range(3):
            for j in range(3):
                y += z[:, i : i + H, j : j + Wd, i, j]
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2)), cols


class Dense(LayerKind):
    name = "dense"
    param_names = ("W", "b")

    def out_shape(self, attrs, in_shapes):
        if in_shapes[0] != (attrs["n_in"],):
            raise ValueError(f"dense expects ({attrs['n_in']},), got {in_shapes[0]}")
        return (attrs["n_out"],)

    def init(self, attrs, in_shapes, rng):
        n_in, n_out = attrs["n_in"], attrs["n_out"]
        return {"W": _fan_in_uniform(rng, (n_in, n_out), n_in), "b": np.zeros(n_out)}

    def forward(self, attrs, params, buffers, xs, training):
        (x,) = xs
        return x @ params["W"] + params["b"], x

    def backward(self, attrs, params, cache, gy):
        x = cache
        return [gy @ params["W"].T], {"W": x.T @ gy, "b": gy.sum(axis=0)}


class BatchNorm(LayerKind):
    """Per-channel normalization; batch statistics in training, running in eval."""

    name = "batch_norm"
    param_names = ("gamma", "beta")
    buffer_names = ("running_mean", "running_var")

    def out_shape(self, attrs, in_shapes):
        if in_shapes[0][0] != attrs["channels"]:
            raise ValueError(f"batch_norm expects {attrs['channels']} channels, got {in_shapes[0][0]}")
        return in_shapes[0]

    def init(self, attrs, in_shapes, rng):
        c = attrs["channels"]
        return {"gamma": np.ones(c), "beta": np.zeros(c)}

    def init_buffers(self, attrs):
        c = attrs["channels"]
        return {"running_mean": np.zeros(c), "running_var": np.ones(c)}

    @staticmethod
    def _bcast(v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, attrs, params, buffers, xs, training):
        (x,) = xs
        axes = (0,) + tuple(range(2, x.ndim))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = BN_MOMENTUM
            buffers["running_mean"][...] = m * buffers["running_mean"] + (1 - m) * mean
            buffers["running_var"][...] = m * buffers["running_var"] + (1 - m) * var
        else:
            mean, var = buffers["running_mean"], buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - self._bcast(mean, x.ndim)) * self._bcast(inv_std, x.ndim)
        y = self._bcast(params["gamma"], x.ndim) * xhat + self._bcast(params["beta"], x.ndim)
        return y, (xhat, inv_std.astype(x.dtype), training)

    def backward(self, attrs, params, cache, gy):
        xhat, inv_std, training = cache
        nd = gy.ndim
        axes = (0,) + tuple(range(2, nd))
        ggamma = (gy * xhat).sum(axis=axes)
        gbeta = gy.sum(axis=axes)
        gxhat = gy * self._bcast(params["gamma"], nd)
        if training:
            n = gy.size // gy.shape[1]
            gx = (
                self._bcast(inv_std / n, nd)
                * (
                    n * gxhat
                    - self._bcast(gxhat.sum(axis=axes), nd)
                    - xhat * self._bcast((gxhat * xhat).sum(axis=axes), nd)
                )
            )
        else:
            gx = gxhat * self._bcast(inv_std, nd)
        return [gx], {"gamma": ggamma, "beta": gbeta}


class LeakyRelu(LayerKind):
    name = "leaky_relu"

    def forward(self, attrs, params, buffers, xs, training):
        (x,) = xs
        slope = attrs.get("slope", LEAKY_SLOPE)
        mask = x > 0
        return np.where(mask, x, slope * x), mask

    def backward(self, attrs, params, cache, gy):
        slope = attrs.get("slope", LEAKY_SLOPE)
        return [np.where(cache, gy, slope * gy)], {}


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Sigmoid(LayerKind):
    name = "sigmoid"

    def forward(self, attrs, params, buffers, xs, training):
        y = _sigmoid(xs[0])
        return y, y

    def backward(self, attrs, params, cache, gy):
        return [gy * cache * (1 - cache)], {}


class Tanh(LayerKind):
    name = "tanh"

    def forward(self, attrs, params, buffers, xs, training):
        y = np.tanh(xs[0])
        return y, y

    def backward(self, attrs, params, cache, gy):
        return [gy * (1 - cache * cache)], {}


class Reshape(LayerKind):
    name = "reshape"

    def out_shape(self, attrs, in_shapes):
        shape = tuple(attrs["shape"])
        if math.prod(shape) != math.prod(in_shapes[0]):
            raise ValueError(f"cannot reshape {in_shapes[0]} to {shape}")
        return shape

    def forward(self, attrs, params, buffers, xs, training):
        (x,) = xs
        return x.reshape((x.shape[0],) + tuple(attrs["shape"])), x.shape

    def backward(self, attrs, params, cache, gy):
        return [gy.reshape(cache)], {}


class Concat(LayerKind):
    """Channel-axis concatenation."""

    name = "concat"
    min_inputs = 2
    max_inputs = None

    def out_shape(self, attrs, in_shapes):
        rest = {s[1:] for s in in_shapes}
        if len(rest) != 1:
            raise ValueError(f"concat needs equal trailing shapes, got {in_shapes}")
        return (sum(s[0] for s in in_shapes),) + in_shapes[0][1:]

    def forward(self, attrs, params, buffers, xs, training):
        sizes = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1), sizes

    def backward(self, attrs, params, cache, gy):
        cuts = np.cumsum(cache)[:-1]
        return list(np.split(gy, cuts, axis=1)), {}


class ResidualAdd(LayerKind):
    name = "residual_add"
    min_inputs = 2
    max_inputs = None

    def out_shape(self, attrs, in_shapes):
        if len(set(in_shapes)) != 1:
            raise ValueError(f"residual_add needs equal shapes, got {in_shapes}")
        return in_shapes[0]

    def forward(self, attrs, params, buffers, xs, training):
        y = xs[0]
        for x in xs[1:]:
            y = y + x
        return y, len(xs)

    def backward(self, attrs, params, cache, gy):
        return [gy] * cache, {}


class ChannelSlice(LayerKind):
    name = "channel_slice"

    def out_shape(self, attrs, in_shapes):
        start, stop = attrs["start"], attrs["stop"]
        c = in_shapes[0][0]
        if not 0 <= start < stop <= c:
            raise ValueError(f"slice [{start}:{stop}] out of range for {c} channels")
        return (stop - start,) + in_shapes[0][1:]

    def forward(self, attrs, params, buffers, xs, training):
        (x,) = xs
        return x[:, attrs["start"] : attrs["stop"]], x.shape

    def backward(self, attrs, params, cache, gy):
        gx = np.zeros(cache, dtype=gy.dtype)
        gx[:, attrs["start"] : attrs["stop"]] = gy
        return [gx], {}


class RecurrentCell(LayerKind):
    """LSTM-style gated update applied independently at every spatial position.

    Inputs are ``x`` and optionally the previous state; the state packs
    ``[h, c]`` along the channel axis (``2 * state_dim`` channels). A missing
    state input means a zero initial state.
    """

    name = "recurrent_cell"
    param_names = ("W", "b")
    max_inputs = 2

    def out_shape(self, attrs, in_shapes):
        s = attrs["state_dim"]
        x = in_shapes[0]
        if len(in_shapes) == 2 and in_shapes[1] != (2 * s,) + x[1:]:
            raise ValueError(f"state shape {in_shapes[1]} does not match {(2 * s,) + x[1:]}")
        if x[0] != attrs["in_ch"]:
            raise ValueError(f"recurrent_cell expects {attrs['in_ch']} input channels, got {x[0]}")
        return (2 * s,) + x[1:]

    def init(self, attrs, in_shapes, rng):
        s, c = attrs["state_dim"], attrs["in_ch"]
        b = np.zeros(4 * s)
        b[s : 2 * s] = 1.0  # forget-gate bias
        return {"W": _fan_in_uniform(rng, (4 * s, c + s), c + s), "b": b}

    def forward(self, attrs, params, buffers, xs, training):
        s = attrs["state_dim"]
        x = xs[0]
        xt = np.moveaxis(x, 1, 0)
        if len(xs) == 2:
            st = np.moveaxis(xs[1], 1, 0)
            h, c = st[:s], st[s:]
        else:
            h = np.zeros((s,) + xt.shape[1:], dtype=x.dtype)
            c = np.zeros_like(h)
        z = np.concatenate([xt, h], axis=0)
        gates = np.tensordot(params["W"], z, axes=(1, 0))
        gates += params["b"].reshape((-1,) + (1,) * (gates.ndim - 1))
        i = _sigmoid(gates[:s])
        f = _sigmoid(gates[s : 2 * s])
        o = _sigmoid(gates[2 * s : 3 * s])
        g = np.tanh(gates[3 * s :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        out = np.moveaxis(np.concatenate([h_new, c_new], axis=0), 0, 1)
        return out, (z, c, i, f, o, g, tc, len(xs), x.shape[1])

    def backward(self, attrs, params, cache, gy):
        s = attrs["state_dim"]
        z, c, i, f, o, g, tc, n_in, n_ch = cache
        gt = np.moveaxis(gy, 1, 0)
        gh, gc = gt[:s], gt[s:]
        gc = gc + gh * o * (1 - tc * tc)
        dgates = np.concatenate(
            [
                gc * g * i * (1 - i),
                gc * c * f * (1 - f),
                gh * tc * o * (1 - o),
                gc * i * (1 - g * g),
            ],
            axis=0,
        )
        red = tuple(range(1, z.ndim))
        gW = np.tensordot(dgates, z, axes=(red, red))
        gb = dgates.sum(axis=red)
        gz = np.tensordot(params["W"].T, dgates, axes=(1, 0))
        grads = [np.moveaxis(gz[:n_ch], 0, 1)]
        if n_in == 2:
            gstate = np.concatenate([gz[n_ch:], gc * f], axis=0)
            grads.append(np.moveaxis(gstate, 0, 1))
        return grads, {"W": gW, "b": gb}


KINDS: dict[str, LayerKind] = {
    k.name: k
    for k in (
        Conv2d(),
        Dense(),
        BatchNorm(),
        LeakyRelu(),
        Sigmoid(),
        Tanh(),
        Reshape(),
        Concat(),
        ResidualAdd(),
        ChannelSlice(),
        RecurrentCell(),
    )
}


def n_params(kind: str, attrs: dict, in_shapes: list[tuple] | None = None) -> int:
    """Trainable parameter count of one layer."""
    if kind == "conv2d":
        return 9 * attrs["in_ch"] * attrs["out_ch"] + attrs["out_ch"]
    if kind == "dense":
        return attrs["n_in"] * attrs["n_out"] + attrs["n_out"]
    if kind == "batch_norm":
        return 2 * attrs["channels"]
    if kind == "recurrent_cell":
        s = attrs["state_dim"]
        return 4 * s * (attrs["in_ch"] + s) + 4 * s
    return 0
