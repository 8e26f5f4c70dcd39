"""Bit-exact quantized execution of layers and whole networks.

Convolutions and MatMuls accumulate in the signed domain: activation codes
minus their zero point times weight codes minus theirs (uniform filters) or
times the shift-add expansion of the APoT code (APoT filters). The integer sums
are rescaled with full-precision scales and requantized with round-half-even.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import kernels, reference
from ..netgraph.layers import Activation, ConfigError, LayerKind, LayerSpec, NetworkGraph
from ..netgraph.manifest import synthesize_weights
from ..quant.plan import LayerPlan, QuantPlan, filter_major_operand
from ..quant.pot import APOT_P_MIN
from ..quant.uniform import QuantParams, quantize_uniform
from .arith import IntTensor, accumulator_bound, check_accumulator

APOT_WEIGHT_MAX = (1 << -APOT_P_MIN) + (1 << (-APOT_P_MIN - 4))


@dataclass(frozen=True)
class LayerError:
    layer_id: int
    mse: float
    max_abs: float
    rel_mse: float = 0.0  # mse / mean(ref**2)


@dataclass(frozen=True)
class SignedWeights:
    """Filter-major weights ready for accumulation.

    ``uniform`` holds ``code - Z`` for uniform rows; APoT rows carry left-shift
    amounts ``p - p_min`` in ``e1``/``e2`` with ``sign`` and ``zero``.
    """

    uniform: np.ndarray
    sign: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    zero: np.ndarray


def signed_weights(entry: LayerPlan, codes) -> SignedWeights:
    codes = np.asarray(codes)
    flat = codes.reshape(codes.shape[0], -1).astype(np.int64)
    zp = np.broadcast_to(entry.uniform.zero_point, (flat.shape[0],))[:, None]
    uniform = np.where(entry.apot_mask[:, None], 0, flat - zp)
    shape = flat[entry.apot_mask].shape
    if entry.n_apot:
        ap = entry.apot_codes(codes)
        sign, e1, e2, zero = ap.sign, ap.p1 - APOT_P_MIN, ap.p2 - APOT_P_MIN, ap.zero
    else:
        sign = e1 = e2 = np.zeros(shape, dtype=np.int64)
        zero = np.zeros(shape, dtype=bool)
    return SignedWeights(uniform.reshape(codes.shape), sign, e1, e2, zero)


def weight_multipliers(entry: LayerPlan, in_scale) -> np.ndarray:
    """Per-filter factor turning an integer accumulator into a real value."""
    s_u = np.broadcast_to(entry.uniform.scale, entry.apot_mask.shape)
    s_a = np.ldexp(in_scale * entry.apot_scale, APOT_P_MIN)
    return np.where(entry.apot_mask, s_a, in_scale * s_u)


def _weight_max(entry: LayerPlan) -> int:
    zp = np.broadcast_to(entry.uniform.zero_point, entry.apot_mask.shape)
    u = np.maximum(zp, entry.uniform.qmax - zp)
    u = int(u[~entry.apot_mask].max(initial=0))
    return max(u, APOT_WEIGHT_MAX if entry.n_apot else 0)


def _act_max(params: QuantParams) -> int:
    z = int(np.max(params.zero_point))
    return max(z, params.qmax - z)


def layer_accumulator_bound(layer: LayerSpec, entry: LayerPlan, in_params: QuantParams) -> int:
    if layer.kind is LayerKind.MATMUL:
        fan_in = layer.input_shape[1]
    else:
        fan_in = layer.in_channels * layer.kernel[0] * layer.kernel[1]
    return accumulator_bound(fan_in, _act_max(in_params), _weight_max(entry))


def requantize(acc, mult, activation: Activation, out_params: QuantParams) -> IntTensor:
    """Rescale integer sums (filters on axis 0) and quantize to ``out_params``."""
    y = acc.astype(np.float64) * mult.reshape((-1,) + (1,) * (acc.ndim - 1))
    if activation is Activation.RELU:
        y = np.maximum(y, 0.0)
    return IntTensor(quantize_uniform(y, out_params), out_params)


def _accumulate(x, w: SignedWeights, mask):
    """(F, P) sums of filter rows against activations ``x`` (C, P)."""
    f = mask.size
    acc = np.zeros((f, x.shape[1]), dtype=np.int64)
    u = ~mask
    if u.any():
        acc[u] = kernels.matmul_uniform(x, w.uniform.reshape(f, -1)[u])
    if mask.any():
        acc[mask] = kernels.matmul_shift(x, w.sign, w.e1, w.e2, w.zero)
    return acc


def _subset(w: SignedWeights, mask, rows) -> tuple:
    """Weights of filter ``rows`` (a slice) with the APoT fields re-indexed."""
    before = int(mask[:rows.start].sum())
    n = int(mask[rows].sum())
    sl = slice(before, before + n)
    return SignedWeights(w.uniform[rows], w.sign[sl], w.e1[sl], w.e2[sl], w.zero[sl]), mask[rows]


def _as_float(t):
    return t.dequantize() if isinstance(t, IntTensor) else np.asarray(t, dtype=np.float64)


def execute_layer(layer: LayerSpec, entry: LayerPlan | None, inputs, out_params: QuantParams) -> IntTensor:
    """Run one quantized DWConv, PWConv or MatMul in the integer domain.

    ``inputs`` is the list of producer tensors (an ``IntTensor`` is accepted
    for single-input layers). The dynamic MatMul operand may be an ``IntTensor``
    or a float array; it is quantized per column with the plan's parameters.
    """
    if entry is None:
        raise ConfigError(f"layer {layer.id}: no plan entry")
    if entry.layer_id != layer.id:
        raise ConfigError(f"layer {layer.id}: plan entry is for layer {entry.layer_id}")
    if isinstance(inputs, IntTensor):
        inputs = [inputs]
    x = inputs[0]
    if not isinstance(x, IntTensor):
        raise TypeError(f"layer {layer.id}: first input must be an IntTensor")
    expected = layer.tensor_shape if layer.kind is LayerKind.MATMUL else layer.input_shape
    if tuple(x.shape) != tuple(expected):
        raise ConfigError(f"layer {layer.id}: input shape {x.shape} != {expected}")
    check_accumulator(layer_accumulator_bound(layer, entry, x.params), f"layer {layer.id}")
    in_scale = float(x.params.scale)
    mult = weight_multipliers(entry, in_scale)

    if layer.kind is LayerKind.DWCONV:
        ph, pw = layer.padding
        xs = np.pad(x.signed(), ((0, 0), (ph, ph), (pw, pw)))
        zp = np.broadcast_to(entry.uniform.zero_point, (layer.filters,))
        w = entry.codes.astype(np.int64) - zp[:, None, None]
        acc = kernels.dwconv(xs, w, layer.stride)
        return requantize(acc, mult, layer.activation, out_params)

    if layer.kind is LayerKind.PWCONV:
        xs = x.signed()[:, ::layer.stride, ::layer.stride]
        c, h, wd = xs.shape
        g = layer.groups
        xg = xs.reshape(g, c // g, h * wd)
        w = signed_weights(entry, entry.codes)
        fg = layer.filters // g
        acc = np.empty((layer.filters, h * wd), dtype=np.int64)
        for gi in range(g):
            rows = slice(gi * fg, (gi + 1) * fg)
            wg, mg = _subset(w, entry.apot_mask, rows)
            acc[rows] = _accumulate(xg[gi], wg, mg)
        return requantize(acc.reshape(layer.filters, h, wd), mult, layer.activation, out_params)

    if layer.kind is LayerKind.MATMUL:
        if len(inputs) < 2 and layer.attrs.get("operand") != "ones":
            raise ConfigError(f"layer {layer.id}: MatMul needs two operands")
        b = reference.matmul_operand(layer, [_as_float(t) for t in inputs])
        g, rows, cols = layer.tensor_shape
        if tuple(b.shape) != (g, cols, layer.filters):
            raise ConfigError(f"layer {layer.id}: operand shape {b.shape} != {(g, cols, layer.filters)}")
        codes = entry.quantize_filters(filter_major_operand(b))
        w = signed_weights(entry, codes)
        xs = x.signed()
        f = layer.filters
        acc = np.empty((g * f, rows), dtype=np.int64)
        for gi in range(g):
            sl = slice(gi * f, (gi + 1) * f)
            wg, mg = _subset(w, entry.apot_mask, sl)
            acc[sl] = _accumulate(np.ascontiguousarray(xs[gi].T), wg, mg)
        out = requantize(acc, mult, layer.activation, out_params)
        codes = out.codes.reshape(g, f, rows).transpose(0, 2, 1)
        return IntTensor(np.ascontiguousarray(codes), out_params)

    raise ConfigError(f"layer {layer.id}: {layer.kind.value} is not executed in the integer domain")


def _layer_error(layer_id, got, ref) -> LayerError:
    d = np.asarray(got, dtype=np.float64) - np.asarray(ref, dtype=np.float64)
    if d.size == 0:
        return LayerError(layer_id, 0.0, 0.0)
    mse = float(np.mean(d * d))
    power = float(np.mean(np.square(ref, dtype=np.float64)))
    return LayerError(layer_id, mse, float(np.max(np.abs(d))), mse / power if power > 0 else 0.0)


def run_network(graph: NetworkGraph, plan: QuantPlan, x, weights: dict | None = None, *, return_outputs: bool = False):
    """Quantized inference of ``graph`` on ``x`` under ``plan``.

    Returns ``(output, errors)``: the dequantized final output and one
    ``LayerError`` per quantized compute layer against the float64 reference
    on the same input. Elementwise layers run on dequantized values and are
    requantized to their calibrated activation parameters; the unquantized
    normalizer MatMuls stay in float.
    """
    if plan.network != graph.name:
        raise ConfigError(f"plan is for {plan.network!r}, graph is {graph.name!r}")
    if weights is None:
        weights = synthesize_weights(graph, plan.seed)
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape) != tuple(graph.input_shape):
        raise ConfigError(f"input shape {x.shape} != {graph.input_shape}")
    ref = reference.forward(graph, weights, x)
    graph_in = IntTensor(quantize_uniform(x, plan.input_params), plan.input_params)
    outs = {}
    errors = []
    for layer in graph.layers:
        ins = [outs[p] for p in layer.producer_ids] if layer.producer_ids else [graph_in]
        if layer.kind is LayerKind.ELEMENTWISE or not layer.quantized:
            y = reference.layer_forward(layer, [_as_float(t) for t in ins], weights.get(layer.id))
            if layer.quantized:
                params = plan.activations[layer.id]
                outs[layer.id] = IntTensor(quantize_uniform(y, params), params)
            else:
                outs[layer.id] = y
            continue
        out = execute_layer(layer, plan.layers.get(layer.id), ins, plan.activations[layer.id])
        outs[layer.id] = out
        errors.append(_layer_error(layer.id, out.dequantize(), ref[layer.id]))
    last = graph.layers[-1].id if graph.layers else None
    output = _as_float(outs[last]) if last is not None else np.zeros(0)
    if return_outputs:
        return output, errors, outs, ref
    return output, errors


def output_mse(graph: NetworkGraph, plan: QuantPlan, inputs, weights: dict | None = None) -> float:
    """Mean end-to-end output MSE against the float reference over ``inputs``."""
    if weights is None:
        weights = synthesize_weights(graph, plan.seed)
    last = graph.layers[-1].id
    total = 0.0
    for x in inputs:
        out, _, _, ref = run_network(graph, plan, x, weights, return_outputs=True)
        total += float(np.mean((out - ref[last]) ** 2))
    return total / len(inputs)


def errors_to_json(errors) -> list:
    return [asdict(e) for e in errors]


def write_error_report(errors, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(errors_to_json(errors), indent=1) + "\n")
    return path


def dequantized_weights(graph: NetworkGraph, plan: QuantPlan, weights: dict, kinds=(LayerKind.DWCONV,)) -> dict:
    """Float weights with the static weights of ``kinds`` replaced by their plan dequantization."""
    kinds = tuple(kinds)
    out = dict(weights)
    for layer in graph.layers:
        entry = plan.layers.get(layer.id)
        if entry is None or entry.codes is None or layer.kind not in kinds:
            continue
        codes = entry.codes
        flat = codes.reshape(codes.shape[0], -1).astype(np.int64)
        s = np.broadcast_to(entry.uniform.scale, entry.apot_mask.shape)[:, None]
        z = np.broadcast_to(entry.uniform.zero_point, entry.apot_mask.shape)[:, None]
        deq = (flat - z) * s
        if entry.n_apot:
            deq[entry.apot_mask] = entry.apot_codes(codes).dequantize()
        out[layer.id] = deq.reshape(codes.shape)
    return out


def weight_only_mse(graph: NetworkGraph, plan: QuantPlan, inputs, weights: dict | None = None,
                    kinds=(LayerKind.DWCONV,)) -> float:
    """Mean output MSE when only the static weights of ``kinds`` are quantized.

    Activations and every other layer stay in float64, which isolates the
    effect of one weight group on the network output.
    """
    if weights is None:
        weights = synthesize_weights(graph, plan.seed)
    qw = dequantized_weights(graph, plan, weights, kinds)
    last = graph.layers[-1].id
    total = 0.0
    for x in inputs:
        ref = reference.forward(graph, weights, x)[last]
        got = reference.forward(graph, qw, x)[last]
        total += float(np.mean((got - ref) ** 2))
    return total / len(inputs)
