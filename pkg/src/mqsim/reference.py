"""Float64 reference semantics for every layer kind in the graph IR."""
from __future__ import annotations

import numpy as np

from .netgraph.layers import Activation, LayerKind, LayerSpec, NetworkGraph


def pwconv(x, w, stride=1, groups=1):
    x = x[:, ::stride, ::stride]
    c, h, wd = x.shape
    f = w.shape[0]
    xg = x.reshape(groups, c // groups, h * wd)
    wg = w.reshape(groups, f // groups, c // groups)
    return np.matmul(wg, xg).reshape(f, h, wd)


def dwconv(x, w, stride=1):
    kh, kw = w.shape[1:]
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("chwij,cij->chw", win, w)


def im2col(x, kernel, stride):
    kh, kw = kernel
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[:3]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * kh * kw, ho, wo)


def tokens(x, part, dim, transpose):
    c, h, w = x.shape
    heads = c // (3 * dim)
    t = x.reshape(heads, 3 * dim, h * w)[:, part * dim:(part + 1) * dim, :]
    return np.ascontiguousarray(t if transpose else t.transpose(0, 2, 1))


def spatial(x, height, width):
    g, n, d = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(g * d, height, width)


def elementwise(layer: LayerSpec, inputs):
    op, a = layer.op, layer.attrs
    if op == "add":
        return inputs[0] + inputs[1]
    if op == "concat":
        return np.concatenate(inputs, axis=0)
    if op == "tokens":
        return tokens(inputs[0], int(a["part"]), int(a["dim"]), bool(a.get("transpose")))
    if op == "spatial":
        return spatial(inputs[0], int(a["height"]), int(a["width"]))
    if op == "normalize":
        return inputs[0] / (inputs[1] + float(a.get("eps", 1e-15)))
    if op == "pool":
        return inputs[0].mean(axis=(1, 2), keepdims=True)
    if op == "im2col":
        return im2col(inputs[0], layer.kernel, layer.stride)
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul_operand(layer: LayerSpec, inputs):
    """Second MatMul operand: the second producer, or the all-ones column."""
    if layer.attrs.get("operand") == "ones":
        a = inputs[0]
        return np.ones((a.shape[0], a.shape[2], 1), dtype=a.dtype)
    return inputs[1]


def apply_activation(layer: LayerSpec, y):
    if layer.activation is Activation.RELU:
        return np.maximum(y, 0.0)
    return y


def layer_forward(layer: LayerSpec, inputs, weights=None):
    """Float output of one layer given its producers' float outputs."""
    kind = layer.kind
    if kind is LayerKind.PWCONV:
        y = pwconv(inputs[0], weights, layer.stride, layer.groups)
    elif kind is LayerKind.DWCONV:
        y = dwconv(inputs[0], weights, layer.stride)
    elif kind is LayerKind.MATMUL:
        y = np.matmul(inputs[0], matmul_operand(layer, inputs))
    else:
        y = elementwise(layer, inputs)
    return apply_activation(layer, y)


def layer_inputs(layer: LayerSpec, outputs: dict, graph_input):
    if not layer.producer_ids:
        return [graph_input]
    return [outputs[p] for p in layer.producer_ids]


def forward(graph: NetworkGraph, weights: dict, x) -> dict:
    """Run the float64 reference network; returns every layer's output by id."""
    x = np.asarray(x, dtype=np.float64)
    outs = {}
    for layer in graph.layers:
        outs[layer.id] = layer_forward(layer, layer_inputs(layer, outs, x), weights.get(layer.id))
    return outs
