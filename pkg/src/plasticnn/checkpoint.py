"""JSON checkpoints holding a network and its mutation history.

Layout::

    {"version": 1, "input_width": n, "seed": u64,
     "layers": [{"out": k, "in": m, "activation": "relu",
                 "weights": [row-major], "bias": [...]}, ...],
     "mutations": [MutationLog entries]}

Floats are written with 17 significant digits, which round-trips every
IEEE double exactly.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .mutations import MutationLog
from .network import Activation, DenseLayer, Network, validate

VERSION = 1


def _float(v) -> str:
    s = format(float(v), ".17g")
    # keep a float literal so JSON readers do not turn -0.0 into the integer 0
    return s if any(c in s for c in ".en") else s + ".0"


def _floats(values) -> str:
    return "[" + ",".join(_float(v) for v in values) + "]"


def dumps(net: Network, log: MutationLog | None = None) -> str:
    log = log or MutationLog()
    parts = [
        "{",
        f'"version":{VERSION},',
        f'"input_width":{net.input_width},',
        f'"seed":{int(net.rng_seed)},',
        '"layers":[',
    ]
    for i, layer in enumerate(net.layers):
        sep = "," if i < len(net.layers) - 1 else ""
        parts.append(
            f'{{"out":{layer.out_width},"in":{layer.in_width},'
            f'"activation":{json.dumps(layer.activation.value)},'
            f'"weights":{_floats(layer.weights.ravel(order="C"))},'
            f'"bias":{_floats(layer.bias)}}}{sep}')
    parts.append("],")
    parts.append(f'"mutations":{json.dumps(log.to_list())}')
    parts.append("}")
    return "\n".join(parts) + "\n"


def save_checkpoint(net: Network, log: MutationLog | None, path) -> None:
    validate(net)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps(net, log))
    os.replace(tmp, path)


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise CheckpointError("missing", field=f"{where}{key}")
    value = doc[key]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise CheckpointError(f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}",
                              field=f"{where}{key}")
    return value


def _float_array(values, n: int, where: str) -> np.ndarray:
    if not isinstance(values, list):
        raise CheckpointError("expected an array", field=where)
    if len(values) != n:
        raise CheckpointError(f"expected {n} values, got {len(values)}", field=where)
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        raise CheckpointError("non-numeric entry", field=where)
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise CheckpointError("non-finite entry", field=where)
    return arr


def loads(text: str) -> tuple[Network, MutationLog]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{exc.msg} (column {exc.colno})", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise CheckpointError("top level must be an object")
    version = _require(doc, "version", int, "")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}", field="version")
    input_width = _require(doc, "input_width", int, "")
    seed = _require(doc, "seed", int, "")
    raw_layers = _require(doc, "layers", list, "")
    if not raw_layers:
        raise CheckpointError("no layers", field="layers")
    layers = []
    for i, d in enumerate(raw_layers):
        where = f"layers[{i}]."
        if not isinstance(d, dict):
            raise CheckpointError("expected an object", field=f"layers[{i}]")
        out = _require(d, "out", int, where)
        inp = _require(d, "in", int, where)
        if out < 1 or inp < 1:
            raise CheckpointError("widths must be positive", field=where + "out")
        try:
            act = Activation(_require(d, "activation", str, where))
        except ValueError:
            raise CheckpointError(f"unknown activation {d['activation']!r}",
                                  field=where + "activation") from None
        W = _float_array(d.get("weights"), out * inp, where + "weights").reshape(out, inp)
        b = _float_array(d.get("bias"), out, where + "bias")
        layers.append(DenseLayer(np.ascontiguousarray(W), b, act))
    log = MutationLog.from_list(_require(doc, "mutations", list, ""))
    net = Network(layers, input_width, seed)
    try:
        validate(net)
    except ValueError as exc:
        raise CheckpointError(str(exc), field="layers") from None
    return net, log


def load_checkpoint(path) -> tuple[Network, MutationLog]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc.strerror}") from None
    return loads(text)
