"""Declarative layer graphs and the forward/backward engine that runs them."""

from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .layers import KINDS, n_params


@dataclass(frozen=True)
class Layer:
    """One node of a model graph.

    ``tie`` names another layer whose parameters (and buffers) this layer
    reuses; gradients from every use accumulate on the shared tensors.
    """

    kind: str
    name: str
    inputs: tuple[str, ...]
    attrs: dict = field(default_factory=dict)
    tie: str | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "name": self.name, "inputs": list(self.inputs), "attrs": self.attrs}
        if self.tie:
            d["tie"] = self.tie
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Layer:
        attrs = {k: tuple(v) if isinstance(v, list) else v for k, v in d["attrs"].items()}
        return cls(d["kind"], d["name"], tuple(d["inputs"]), attrs, d.get("tie"))

    @property
    def owner(self) -> str:
        return self.tie or self.name


class ModelSpec:
    """Inputs with per-sample shapes, ordered layers and named outputs."""

    def __init__(self, inputs: Mapping[str, tuple], layers: list[Layer], outputs: list[str], seed: int = 0):
        self.inputs = {k: tuple(v) for k, v in inputs.items()}
        self.layers = list(layers)
        self.outputs = list(outputs)
        self.seed = int(seed)
        self.shapes = self._infer_shapes()

    def _infer_shapes(self) -> dict[str, tuple]:
        shapes = dict(self.inputs)
        by_name = {}
        for layer in self.layers:
            if layer.kind not in KINDS:
                raise ValueError(f"unknown layer kind {layer.kind!r}")
            if layer.name in shapes:
                raise ValueError(f"duplicate node name {layer.name!r}")
            kind = KINDS[layer.kind]
            n = len(layer.inputs)
            if n < kind.min_inputs or (kind.max_inputs is not None and n > kind.max_inputs):
                raise ValueError(f"{layer.name}: {layer.kind} cannot take {n} inputs")
            missing = [i for i in layer.inputs if i not in shapes]
            if missing:
                raise ValueError(f"{layer.name}: unknown inputs {missing}")
            if layer.tie is not None:
                src = by_name.get(layer.tie)
                if src is None or src.kind != layer.kind or src.attrs != layer.attrs or src.tie:
                    raise ValueError(f"{layer.name}: cannot tie to {layer.tie!r}")
            shapes[layer.name] = tuple(kind.out_shape(layer.attrs, [shapes[i] for i in layer.inputs]))
            by_name[layer.name] = layer
        for out in self.outputs:
            if out not in shapes:
                raise ValueError(f"unknown output {out!r}")
        return shapes

    def to_dict(self) -> dict:
        return {
            "inputs": {k: list(v) for k, v in self.inputs.items()},
            "layers": [l.to_dict() for l in self.layers],
            "outputs": self.outputs,
            "seed": self.seed,
        }

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        return cls(
            {k: tuple(v) for k, v in d["inputs"].items()},
            [Layer.from_dict(l) for l in d["layers"]],
            d["outputs"],
            d["seed"],
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, ModelSpec) and self.canonical() == other.canonical()

    def layer(self, name: str) -> Layer:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def n_params(self) -> int:
        return sum(
            n_params(l.kind, l.attrs, [self.shapes[i] for i in l.inputs]) for l in self.layers if l.tie is None
        )


class GraphBuilder:
    """Incremental construction of a :class:`ModelSpec` with automatic names."""

    def __init__(self, inputs: Mapping[str, tuple], seed: int = 0):
        self.inputs = dict(inputs)
        self.layers: list[Layer] = []
        self.seed = seed
        self._count: dict[str, int] = {}

    def add(self, kind: str, inputs, name: str | None = None, tie: str | None = None, **attrs) -> str:
        if isinstance(inputs, str):
            inputs = (inputs,)
        if name is None:
            k = self._count.get(kind, 0)
            self._count[kind] = k + 1
            name = f"{kind}{k}"
        self.layers.append(Layer(kind, name, tuple(inputs), attrs, tie))
        return name

    def conv2d(self, x, in_ch, out_ch, **kw):
        return self.add("conv2d", x, in_ch=in_ch, out_ch=out_ch, **kw)

    def dense(self, x, n_in, n_out, **kw):
        return self.add("dense", x, n_in=n_in, n_out=n_out, **kw)

    def batch_norm(self, x, channels, **kw):
        return self.add("batch_norm", x, channels=channels, **kw)

    def leaky_relu(self, x, slope=0.3, **kw):
        return self.add("leaky_relu", x, slope=slope, **kw)

    def sigmoid(self, x, **kw):
        return self.add("sigmoid", x, **kw)

    def tanh(self, x, **kw):
        return self.add("tanh", x, **kw)

    def reshape(self, x, shape, **kw):
        return self.add("reshape", x, shape=tuple(shape), **kw)

    def concat(self, xs, **kw):
        return self.add("concat", tuple(xs), **kw)

    def residual_add(self, xs, **kw):
        return self.add("residual_add", tuple(xs), **kw)

    def channel_slice(self, x, start, stop, **kw):
        return self.add("channel_slice", x, start=start, stop=stop, **kw)

    def recurrent_cell(self, x, state, in_ch, state_dim, **kw):
        inputs = (x,) if state is None else (x, state)
        return self.add("recurrent_cell", inputs, in_ch=in_ch, state_dim=state_dim, **kw)

    def build(self, outputs) -> ModelSpec:
        if isinstance(outputs, str):
            outputs = [outputs]
        return ModelSpec(self.inputs, self.layers, list(outputs), self.seed)


@dataclass
class TrainedModel:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    precision: str = "float32"

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def astype(self, dtype) -> TrainedModel:
        return TrainedModel(
            self.spec,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            copy.deepcopy(self.metadata),
            np.dtype(dtype).name,
        )

    def copy(self) -> TrainedModel:
        return self.astype(self.dtype)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def init_model(spec: ModelSpec, dtype=np.float32) -> TrainedModel:
    """Fan-in uniform weights for conv/dense, unit/zero batch-norm affine."""
    rng = np.random.default_rng(spec.seed)
    params, buffers = {}, {}
    for layer in spec.layers:
        if layer.tie is not None:
            continue
        kind = KINDS[layer.kind]
        in_shapes = [spec.shapes[i] for i in layer.inputs]
        for k, v in kind.init(layer.attrs, in_shapes, rng).items():
            params[f"{layer.name}.{k}"] = np.asarray(v, dtype=dtype)
        for k, v in kind.init_buffers(layer.attrs).items():
            buffers[f"{layer.name}.{k}"] = np.asarray(v, dtype=dtype)
    return TrainedModel(spec, params, buffers, {"epochs": 0, "seed": spec.seed}, np.dtype(dtype).name)


def _layer_params(model: TrainedModel, layer: Layer, store: dict) -> dict:
    kind = KINDS[layer.kind]
    names = kind.param_names if store is model.params else kind.buffer_names
    return {k: store[f"{layer.owner}.{k}"] for k in names}


@dataclass
class Cache:
    layer_caches: dict
    shapes: dict
    training: bool


def _as_inputs(model: TrainedModel, inputs) -> dict[str, np.ndarray]:
    if not isinstance(inputs, Mapping):
        if len(model.spec.inputs) != 1:
            raise ValueError("model has several inputs; pass a dict")
        inputs = {next(iter(model.spec.inputs)): inputs}
    out = {}
    for name, shape in model.spec.inputs.items():
        if name not in inputs:
            raise ValueError(f"missing input {name!r}")
        x = np.asarray(inputs[name], dtype=model.dtype)
        if x.shape[1:] != shape:
            raise ValueError(f"input {name!r}: expected (batch, *{shape}), got {x.shape}")
        out[name] = x
    return out


def forward(model: TrainedModel, inputs, training: bool = False):
    """Evaluate the graph; returns ``(outputs, cache)``.

    ``outputs`` is an array for single-output models, else a dict. Training
    mode uses batch statistics in batch-norm layers and updates their running
    statistics in place.
    """
    values = _as_inputs(model, inputs)
    caches = {}
    for layer in model.spec.layers:
        kind = KINDS[layer.kind]
        xs = [values[i] for i in layer.inputs]
        params = _layer_params(model, layer, model.params)
        buffers = _layer_params(model, layer, model.buffers)
        y, caches[layer.name] = kind.forward(layer.attrs, params, buffers, xs, training)
        values[layer.name] = y
    outs = {o: values[o] for o in model.spec.outputs}
    cache = Cache(caches, {k: v.shape for k, v in values.items()}, training)
    if len(outs) == 1:
        return next(iter(outs.values())), cache
    return outs, cache


def predict(model: TrainedModel, inputs, batch_size: int = 256):
    """Eval-mode forward in batches."""
    inputs = _as_inputs(model, inputs)
    n = len(next(iter(inputs.values())))
    chunks = []
    for start in range(0, n, batch_size):
        out, _ = forward(model, {k: v[start : start + batch_size] for k, v in inputs.items()})
        chunks.append(out)
    if not chunks:
        raise ValueError("empty input")
    if isinstance(chunks[0], dict):
        return {k: np.concatenate([c[k] for c in chunks]) for k in chunks[0]}
    return np.concatenate(chunks)


def backward(model: TrainedModel, cache: Cache | None, output_grads):
    """Reverse-mode pass; returns ``(param_grads, input_grads)``."""
    if cache is None:
        raise ValueError("backward needs the cache from a forward pass")
    if not isinstance(output_grads, Mapping):
        if len(model.spec.outputs) != 1:
            raise ValueError("model has several outputs; pass a dict of gradients")
        output_grads = {model.spec.outputs[0]: output_grads}
    grads: dict[str, np.ndarray] = {}
    for name, g in output_grads.items():
        grads[name] = np.asarray(g, dtype=model.dtype)
    pgrads = {k: np.zeros_like(v) for k, v in model.params.items()}
    for layer in reversed(model.spec.layers):
        gy = grads.pop(layer.name, None)
        if gy is None:
            continue
        kind = KINDS[layer.kind]
        params = _layer_params(model, layer, model.params)
        gxs, gps = kind.backward(layer.attrs, params, cache.layer_caches[layer.name], gy)
        for k, g in gps.items():
            pgrads[f"{layer.owner}.{k}"] += g
        for src, g in zip(layer.inputs, gxs):
            if src in grads:
                grads[src] = grads[src] + g
            else:
                grads[src] = g
    input_grads = {}
    for name in model.spec.inputs:
        g = grads.get(name)
        input_grads[name] = np.zeros(cache.shapes[name], dtype=model.dtype) if g is None else g
    return pgrads, input_grads


def extract(model: TrainedModel, outputs: list[str], inputs: list[str]) -> TrainedModel:
    """Sub-model computing ``outputs`` from the nodes named in ``inputs``.

    Parameters are copied; ties whose source falls outside the subgraph are
    re-rooted on the first tied layer that remains.
    """
    spec = model.spec
    by_name = {l.name: l for l in spec.layers}
    needed: set[str] = set()
    stack = list(outputs)
    while stack:
        n = stack.pop()
        if n in needed or n in inputs:
            continue
        if n in spec.inputs:
            raise ValueError(f"output depends on model input {n!r} not listed in inputs")
        needed.add(n)
        stack.extend(by_name[n].inputs)
    layers, params, buffers = [], {}, {}
    rename: dict[str, str] = {}
    for layer in spec.layers:
        if layer.name not in needed:
            continue
        owner = layer.owner
        if layer.tie and layer.tie not in needed:
            if owner in rename:
                layer = Layer(layer.kind, layer.name, layer.inputs, layer.attrs, rename[owner])
            else:
                rename[owner] = layer.name
                layer = Layer(layer.kind, layer.name, layer.inputs, layer.attrs, None)
        if layer.tie is None:
            kind = KINDS[layer.kind]
            for k in kind.param_names:
                params[f"{layer.name}.{k}"] = model.params[f"{owner}.{k}"].copy()
            for k in kind.buffer_names:
                buffers[f"{layer.name}.{k}"] = model.buffers[f"{owner}.{k}"].copy()
        layers.append(layer)
    sub = ModelSpec({i: spec.shapes[i] for i in inputs}, layers, list(outputs), spec.seed)
    return TrainedModel(sub, params, buffers, copy.deepcopy(model.metadata), model.precision)


_MAGIC = b"NNCK"
_VERSION = 1


def save_model(model: TrainedModel, path: str | Path) -> None:
    """Header (spec as canonical JSON, metadata, tensor table) + float32 tensors."""
    tensors = [("param:" + k, v) for k, v in sorted(model.params.items())]
    tensors += [("buffer:" + k, v) for k, v in sorted(model.buffers.items())]
    table, offset = [], 0
    for name, v in tensors:
        table.append({"name": name, "shape": list(v.shape), "offset": offset})
        offset += v.size * 4
    header = json.dumps(
        {"spec": json.loads(model.spec.canonical()), "metadata": model.metadata, "tensors": table},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, len(header)))
        fh.write(header)
        for _, v in tensors:
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_model(path: str | Path) -> TrainedModel:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[12 : 12 + hlen])
    base = 12 + hlen
    params, buffers = {}, {}
    for t in header["tensors"]:
        size = math.prod(t["shape"])
        start = base + t["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=start).reshape(t["shape"]).astype(np.float32)
        kind, name = t["name"].split(":", 1)
        (params if kind == "param" else buffers)[name] = arr
    return TrainedModel(ModelSpec.from_dict(header["spec"]), params, buffers, header["metadata"])
