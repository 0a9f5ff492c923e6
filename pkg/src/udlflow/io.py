"""Portable model interchange: JSON trees with deterministic key order.

Floats are serialized with Python's shortest round-trip representation,
so save/load/save is byte-identical and loaded models evaluate exactly
like the originals. Three top-level kinds exist: "flow", "classifier",
and "composite" (a node list with explicit wiring, used to ship a flow
together with the duplicated classifier copies a global-robustness
property references). docs/format.md documents the schema.
"""

from __future__ import annotations

import json

import numpy as np

from . import numerics as nm
from .classifiers import ReluClassifier
from .errors import SchemaError, VersionError
from .flows import (AdjointBlock, ConvConditioner, CouplingLayer,
                    DenseConditioner, DiagonalScaling, FlowModel,
                    LUAffineLayer, OneStarConv, PlainBlock)
from .radial import NormDistribution, RadialBase, StandardNormalBase

FORMAT_VERSION = 1


def _listify(arr) -> list:
    return np.asarray(arr, dtype=np.float64).tolist()


def _k_out(k) -> object:
    return "inf" if k == np.inf else int(k)


def _k_in(k) -> object:
    return np.inf if k == "inf" else int(k)


# ---------------------------------------------------------------------------
# encoding

def _encode_lu(layer: LUAffineLayer) -> dict:
    return {"kind": "lu-affine", "dim": layer.dim,
            "l": _listify(layer.l_param.data), "u": _listify(layer.u_param.data),
            "diag_t": _listify(layer.diag_t.data),
            "diag_sign": _listify(layer.diag_sign),
            "bias": _listify(layer.bias.data)}


def _encode_affine(layer) -> dict:
    if isinstance(layer, LUAffineLayer):
        return _encode_lu(layer)
    if isinstance(layer, OneStarConv):
        return {"kind": "one-star-conv", "shape": list(layer.shape),
                "channel": _encode_lu(layer.channel)}
    if isinstance(layer, DiagonalScaling):
        return {"kind": "diagonal", "dim": layer.dim,
                "diag_t": _listify(layer.diag_t.data),
                "diag_sign": _listify(layer.diag_sign)}
    raise SchemaError(f"unknown affine layer type {type(layer).__name__}")


def _encode_conditioner(cond) -> dict:
    out = {"kind": cond.kind,
           "weights": [_listify(w.data) for w in cond.weights],
           "biases": [_listify(b.data) for b in cond.biases]}
    if cond.kind == "conv":
        out["shape"] = list(cond.shape)
    return out


def _encode_base(base) -> dict:
    if isinstance(base, StandardNormalBase):
        return {"kind": "standard-normal", "dim": base.dim, "k": 2}
    return {"kind": base.dist.kind, "dim": base.dim, "k": _k_out(base.k),
            "theta": _listify(base.dist.theta.data),
            "learnable": base.dist.learnable}


def encode_flow(flow: FlowModel) -> dict:
    blocks = []
    for b in flow.blocks:
        blocks.append({
            "affine": None if b.affine is None else _encode_affine(b.affine),
            "coupling": {"mask": _listify(b.coupling.mask),
                         "conditioner": _encode_conditioner(b.coupling.conditioner)}})
    return {"format_version": FORMAT_VERSION, "kind": "flow",
            "shape": list(flow.shape),
            "uniformly_scaling": flow.uniformly_scaling,
            "base": _encode_base(flow.base),
            "blocks": blocks,
            "final_affine": (None if flow.final_affine is None
                             else _encode_affine(flow.final_affine))}


def encode_classifier(clf: ReluClassifier) -> dict:
    return {"format_version": FORMAT_VERSION, "kind": "classifier",
            "layers": [{"w": _listify(w.data), "b": _listify(b.data)}
                       for w, b in zip(clf.weights, clf.biases)]}


def encode_composite(flow: FlowModel | None, classifier: ReluClassifier,
                     duplicate_classifier: bool) -> dict:
    """Node list with explicit wiring for task-shaped graphs."""
    nodes = []
    inputs = []
    clf_doc = encode_classifier(classifier)
    if flow is not None:
        inputs.append("z")
        nodes.append({"id": "x_t", "op": "model", "inputs": ["z"],
                      "model": encode_flow(flow)})
        feed = "x_t"
    else:
        inputs.append("x")
        feed = "x"
    nodes.append({"id": "y", "op": "model", "inputs": [feed], "model": clf_doc})
    outputs = ["y"]
    if duplicate_classifier:
        inputs.append("delta")
        nodes.append({"id": "x_p", "op": "add", "inputs": [feed, "delta"]})
        nodes.append({"id": "y_p", "op": "model", "inputs": ["x_p"],
                      "model": json.loads(json.dumps(clf_doc))})
        outputs.append("y_p")
    return {"format_version": FORMAT_VERSION, "kind": "composite",
            "inputs": inputs, "outputs": outputs, "nodes": nodes}


# ---------------------------------------------------------------------------
# decoding

def _expect(doc: dict, key: str, where: str):
    if key not in doc:
        raise SchemaError(f"{where}: missing key {key!r}")
    return doc[key]


def _decode_lu(doc: dict, where: str) -> LUAffineLayer:
    dim = int(_expect(doc, "dim", where))
    layer = LUAffineLayer(dim)
    for name, target in (("l", layer.l_param), ("u", layer.u_param)):
        arr = np.asarray(_expect(doc, name, where), dtype=np.float64)
        if arr.shape != (dim, dim):
            raise SchemaError(f"{where}: {name} must be {dim}x{dim}")
        target.data = arr
    sign = np.asarray(_expect(doc, "diag_sign", where), dtype=np.float64)
    diag_t = np.asarray(_expect(doc, "diag_t", where), dtype=np.float64)
    bias = np.asarray(_expect(doc, "bias", where), dtype=np.float64)
    if sign.shape != (dim,) or diag_t.shape != (dim,) or bias.shape != (dim,):
        raise SchemaError(f"{where}: diagonal/bias length must be {dim}")
    if np.any(np.abs(sign) != 1.0) or not np.all(np.isfinite(diag_t)):
        raise SchemaError(
            f"{where}: stored U diagonal could vanish (sign not in {{-1,1}} "
            "or non-finite magnitude); refusing to load")
    layer.diag_sign = sign
    layer.diag_t.data = diag_t
    layer.bias.data = bias
    return layer


def _decode_affine(doc: dict, where: str):
    kind = _expect(doc, "kind", where)
    if kind == "lu-affine":
        return _decode_lu(doc, where)
    if kind == "one-star-conv":
        layer = OneStarConv(tuple(_expect(doc, "shape", where)))
        layer.channel = _decode_lu(_expect(doc, "channel", where), where + ".channel")
        return layer
    if kind == "diagonal":
        dim = int(_expect(doc, "dim", where))
        layer = DiagonalScaling(dim)
        sign = np.asarray(_expect(doc, "diag_sign", where), dtype=np.float64)
        if np.any(np.abs(sign) != 1.0):
            raise SchemaError(f"{where}: zero diagonal sign; refusing to load")
        layer.diag_sign = sign
        layer.diag_t.data = np.asarray(_expect(doc, "diag_t", where),
                                       dtype=np.float64)
        return layer
    raise SchemaError(f"{where}: unknown affine kind {kind!r}")


def _decode_conditioner(doc: dict, where: str):
    kind = _expect(doc, "kind", where)
    weights = _expect(doc, "weights", where)
    biases = _expect(doc, "biases", where)
    if len(weights) != len(biases):
        raise SchemaError(f"{where}: weight/bias layer counts disagree")
    if kind == "dense":
        cond = DenseConditioner.__new__(DenseConditioner)
    elif kind == "conv":
        cond = ConvConditioner.__new__(ConvConditioner)
        cond.shape = tuple(_expect(doc, "shape", where))
    else:
        raise SchemaError(f"{where}: unknown conditioner kind {kind!r}")
    cond.weights = []
    cond.biases = []
    prev_out = None
    for i, (w, b) in enumerate(zip(weights, biases)):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
            raise SchemaError(f"{where} layer {i}: parameter count corrupted")
        if prev_out is not None and kind == "dense" and w.shape[0] != prev_out:
            raise SchemaError(f"{where} layer {i}: parameter count corrupted")
        prev_out = w.shape[1]
        cond.weights.append(nm.Tensor(w, requires_grad=True))
        cond.biases.append(nm.Tensor(b, requires_grad=True))
    return cond


def _decode_base(doc: dict):
    kind = _expect(doc, "kind", "base")
    dim = int(_expect(doc, "dim", "base"))
    if kind == "standard-normal":
        return StandardNormalBase(dim)
    theta = np.asarray(_expect(doc, "theta", "base"), dtype=np.float64)
    dist = NormDistribution(kind, theta, learnable=bool(doc.get("learnable", True)))
    return RadialBase(dim, _k_in(_expect(doc, "k", "base")), dist)


def decode_flow(doc: dict) -> FlowModel:
    blocks = []
    for i, bdoc in enumerate(_expect(doc, "blocks", "flow")):
        where = f"block {i}"
        cdoc = _expect(bdoc, "coupling", where)
        mask = np.asarray(_expect(cdoc, "mask", where), dtype=np.float64)
        cond = _decode_conditioner(_expect(cdoc, "conditioner", where),
                                   f"{where} conditioner")
        coupling = CouplingLayer(mask, cond)
        if bdoc.get("affine") is None:
            blocks.append(PlainBlock(coupling))
        else:
            blocks.append(AdjointBlock(
                _decode_affine(bdoc["affine"], f"{where} affine"), coupling))
    final = doc.get("final_affine")
    final_affine = None if final is None else _decode_affine(final, "final affine")
    flow = FlowModel(blocks, final_affine, _decode_base(_expect(doc, "base", "flow")),
                     shape=tuple(_expect(doc, "shape", "flow")))
    return flow


def decode_classifier(doc: dict) -> ReluClassifier:
    ws, bs = [], []
    prev_out = None
    for i, layer in enumerate(_expect(doc, "layers", "classifier")):
        w = np.asarray(_expect(layer, "w", f"classifier layer {i}"),
                       dtype=np.float64)
        b = np.asarray(_expect(layer, "b", f"classifier layer {i}"),
                       dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise SchemaError(f"classifier layer {i}: parameter count corrupted")
        if prev_out is not None and w.shape[0] != prev_out:
            raise SchemaError(f"classifier layer {i}: parameter count corrupted")
        prev_out = w.shape[1]
        ws.append(w)
        bs.append(b)
    return ReluClassifier.from_arrays(ws, bs)


# ---------------------------------------------------------------------------
# public API

def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save(model, path) -> None:
    """Write a flow, classifier, or composite document."""
    if isinstance(model, FlowModel):
        doc = encode_flow(model)
    elif isinstance(model, ReluClassifier):
        doc = encode_classifier(model)
    elif isinstance(model, dict):
        doc = model
    else:
        raise SchemaError(f"cannot serialize {type(model).__name__}")
    with open(path, "w") as fh:
        fh.write(dumps(doc))


def load(path):
    """Read a model file back into live objects.

    Returns a FlowModel, a ReluClassifier, or for composites a dict
    {"flow": FlowModel | None, "classifier": ReluClassifier,
    "duplicated": bool}.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(
            f"{path}: format version {version!r}, this build reads {FORMAT_VERSION}")
    kind = doc.get("kind")
    if kind == "flow":
        return decode_flow(doc)
    if kind == "classifier":
        return decode_classifier(doc)
    if kind == "composite":
        return decode_composite(doc)
    raise SchemaError(f"{path}: unknown document kind {kind!r}")


def decode_composite(doc: dict) -> dict:
    flow = None
    classifier = None
    duplicated = False
    for node in _expect(doc, "nodes", "composite"):
        op = _expect(node, "op", "composite node")
        if op == "model":
            inner = _expect(node, "model", "composite node")
            if inner.get("kind") == "flow":
                flow = decode_flow(inner)
            elif node["id"] == "y":
                classifier = decode_classifier(inner)
            else:
                duplicated = True  # second classifier copy
        elif op == "add":
            duplicated = True
        else:
            raise SchemaError(f"composite node op {op!r} not supported")
    if classifier is None:
        raise SchemaError("composite document lacks a classifier node")
    return {"flow": flow, "classifier": classifier, "duplicated": duplicated}
