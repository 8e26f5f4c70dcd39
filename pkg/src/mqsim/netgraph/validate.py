from __future__ import annotations

from dataclasses import dataclass

from .layers import ELEMENTWISE_OPS, ConfigError, LayerKind, NetworkGraph


@dataclass(frozen=True)
class Violation:
    layer_id: int
    code: str
    message: str

    def __str__(self):
        return f"layer {self.layer_id}: [{self.code}] {self.message}"


def validate_graph(graph: NetworkGraph) -> list:
    """Return every invariant violation found in ``graph``; empty means ok."""
    out = []
    seen = {}
    all_ids = {l.id for l in graph.layers}

    for layer in graph.layers:
        lid = layer.id
        if lid in seen:
            out.append(Violation(lid, "duplicate-id", "layer id appears more than once"))
        out.extend(_check_fields(layer))

        for p in layer.producer_ids:
            if p not in all_ids:
                out.append(Violation(lid, "unknown-producer", f"producer {p} does not exist"))
            elif p not in seen:
                out.append(Violation(lid, "order", f"producer {p} does not precede its consumer"))

        try:
            out.extend(_check_shapes(layer, seen, graph.input_shape))
        except (KeyError, ConfigError, ValueError, ZeroDivisionError) as exc:
            out.append(Violation(lid, "bad-attrs", str(exc)))
        seen[lid] = layer
    return out


def _check_fields(layer):
    lid, kind = layer.id, layer.kind
    v = []
    if layer.stride < 1:
        v.append(Violation(lid, "stride", f"stride must be positive, got {layer.stride}"))
    if layer.groups < 1:
        v.append(Violation(lid, "groups", f"groups must be positive, got {layer.groups}"))
    if kind is LayerKind.PWCONV:
        if layer.kernel != (1, 1):
            v.append(Violation(lid, "kernel", f"PWConv kernel must be (1, 1), got {layer.kernel}"))
        if len(layer.input_shape) != 3:
            v.append(Violation(lid, "shape", "PWConv input must be (C, H, W)"))
        elif layer.input_shape[0] % layer.groups or layer.filters % layer.groups:
            v.append(Violation(lid, "groups", "channels and filters must divide into groups"))
    if kind is LayerKind.DWCONV:
        if len(layer.input_shape) != 3:
            v.append(Violation(lid, "shape", "DWConv input must be (C, H, W)"))
        elif layer.filters != layer.input_shape[0]:
            v.append(Violation(lid, "filters", "DWConv filters must equal input channels"))
        if min(layer.kernel) < 1:
            v.append(Violation(lid, "kernel", f"bad kernel {layer.kernel}"))
    if kind is LayerKind.MATMUL and len(layer.input_shape) != 2:
        v.append(Violation(lid, "shape", "MatMul input_shape must be (rows, cols)"))
    if kind is not LayerKind.ELEMENTWISE and layer.filters < 1:
        v.append(Violation(lid, "filters", "filter count must be positive"))
    if kind is LayerKind.ELEMENTWISE and layer.op not in ELEMENTWISE_OPS:
        v.append(Violation(lid, "op", f"unknown elementwise op {layer.op!r}"))
    return v


def _check_shapes(layer, seen, graph_input):
    lid = layer.id
    prods = [seen[p] for p in layer.producer_ids if p in seen]
    if len(prods) != len(layer.producer_ids):
        return []
    v = []
    expect = layer.tensor_shape
    if not prods:
        if expect != tuple(graph_input):
            v.append(Violation(lid, "shape", f"graph input {tuple(graph_input)} does not match {expect}"))
        return v

    first = prods[0].output_shape
    if layer.op == "concat":
        chans = sum(p.output_shape[0] for p in prods)
        if any(p.output_shape[1:] != first[1:] for p in prods) or chans != layer.attrs["channels"]:
            v.append(Violation(lid, "shape", "concat inputs disagree"))
        if first != expect:
            v.append(Violation(lid, "shape", f"input {expect} != producer output {first}"))
        return v

    if first != expect:
        v.append(Violation(lid, "shape", f"input {expect} != producer {prods[0].id} output {first}"))

    if layer.kind is LayerKind.MATMUL:
        want = (layer.groups,) + layer.weight_operand_shape
        if layer.attrs.get("operand") == "ones":
            if len(prods) != 1 or layer.filters != 1:
                v.append(Violation(lid, "shape", "ones-operand MatMul takes one producer and one filter"))
        elif len(prods) != 2:
            v.append(Violation(lid, "arity", "MatMul needs two producers"))
        elif prods[1].output_shape != want:
            v.append(Violation(lid, "shape", f"second operand {prods[1].output_shape} != {want}"))
    elif layer.op == "add":
        if len(prods) != 2 or prods[1].output_shape != first:
            v.append(Violation(lid, "shape", "add inputs disagree"))
    elif layer.op == "normalize":
        if len(prods) != 2 or prods[1].output_shape != first[:2] + (1,):
            v.append(Violation(lid, "shape", "normalize needs (G, N, d) and (G, N, 1) inputs"))
    elif len(prods) != 1:
        v.append(Violation(lid, "arity", f"{layer.kind.value} takes one producer"))
    return v
