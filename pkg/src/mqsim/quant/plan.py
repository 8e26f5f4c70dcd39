"""Network-level two-level mixed quantization plans.

Depthwise layers get low-bit per-filter uniform weights. Pointwise and MatMul
layers split their filters between 8-bit uniform and APoT: filters are ranked
by how much APoT lowers their MSE relative to uniform, and the best-ranked
fraction (the target ratio) goes to APoT. Activations are 8-bit per-layer
uniform everywhere.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .. import reference
from ..netgraph.layers import ConfigError, LayerCategory, LayerKind, NetworkGraph, layer_category
from ..netgraph.manifest import synthesize_weights
from ..netgraph.validate import validate_graph
from .pot import APOT_CODE_BITS, APoTCodes, apot_scale, quantize_apot
from .select import UNIFORM_BITS, scheme_errors
from .uniform import Granularity, QuantParams, calibrate_affine, quantize_uniform

FORMAT = "mqsim-plan/1"
ACT_BITS = 8
SCOPES = ("layer", "network")


def parse_ratio(value) -> float:
    """APoT fraction from ``0.5``, ``"0.5"`` or an ``"apot:uniform"`` string like ``"1:1"``."""
    if isinstance(value, str) and ":" in value:
        a, b = (Fraction(v.strip()) for v in value.split(":", 1))
        if a < 0 or b < 0 or a + b == 0:
            raise ConfigError(f"bad ratio {value!r}")
        return float(a / (a + b))
    try:
        r = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad ratio {value!r}") from None
    if not 0.0 <= r <= 1.0:
        raise ConfigError(f"target ratio must lie in [0, 1], got {r}")
    return r


@dataclass
class LayerPlan:
    layer_id: int
    kind: LayerKind
    weight_bits: int
    groups: int
    apot_mask: np.ndarray
    uniform: QuantParams
    apot_scale: np.ndarray
    codes: np.ndarray | None = None
    mse_uniform: np.ndarray | None = None
    mse_apot: np.ndarray | None = None

    @property
    def n_filters(self) -> int:
        return int(self.apot_mask.size)

    @property
    def n_apot(self) -> int:
        return int(self.apot_mask.sum())

    @property
    def n_uniform(self) -> int:
        return self.n_filters - self.n_apot

    def group_counts(self):
        """(uniform, apot) filter counts for each group."""
        m = self.apot_mask.reshape(self.groups, -1)
        a = m.sum(axis=1)
        return m.shape[1] - a, a

    @property
    def scheme_string(self) -> str:
        return "".join("A" if a else "U" for a in self.apot_mask)

    def quantize_filters(self, w):
        """Codes for a filter-major weight tensor (uniform codes or packed APoT)."""
        w = np.asarray(w, dtype=np.float64)
        codes = quantize_uniform(w, self.uniform).astype(np.uint8)
        if self.n_apot:
            flat = w.reshape(w.shape[0], -1)[self.apot_mask]
            scale = self.apot_scale[self.apot_mask][:, None]
            packed = quantize_apot(flat, scale).pack()
            codes.reshape(w.shape[0], -1)[self.apot_mask] = packed
        return codes

    def apot_codes(self, codes):
        """Unpacked APoT codes of the APoT rows of ``codes``."""
        flat = codes.reshape(codes.shape[0], -1)[self.apot_mask]
        return APoTCodes.unpack(flat, self.apot_scale[self.apot_mask][:, None])


@dataclass
class QuantPlan:
    network: str
    target_ratio: float
    bits_dw: int
    scope: str
    seed: int
    input_params: QuantParams
    activations: dict
    layers: dict
    act_bits: int = ACT_BITS
    meta: dict = field(default_factory=dict)

    def ratio_counts(self):
        """(apot, uniform) filters over computation-intensive layers."""
        apot = uni = 0
        for lp in self.layers.values():
            if lp.kind is LayerKind.DWCONV:
                continue
            apot += lp.n_apot
            uni += lp.n_uniform
        return apot, uni

    @property
    def achieved_ratio(self) -> float:
        apot, uni = self.ratio_counts()
        return apot / (apot + uni) if apot + uni else 0.0


def synthetic_inputs(graph: NetworkGraph, n: int, seed: int):
    rng = np.random.default_rng([int(seed), 0xCA1])
    return [rng.normal(size=graph.input_shape) for _ in range(n)]


def filter_major_operand(b):
    """(G, cols, F) MatMul operand as (G * F, cols) filter rows."""
    g, c, f = b.shape
    return b.transpose(0, 2, 1).reshape(g * f, c)


def _calibration_pass(graph, weights, inputs):
    ranges, operands = {}, {}
    in_ranges = []
    for x in inputs:
        x = np.asarray(x, dtype=np.float64)
        in_ranges.append(x)
        outs = {}
        for layer in graph.layers:
            ins = reference.layer_inputs(layer, outs, x)
            y = reference.layer_forward(layer, ins, weights.get(layer.id))
            outs[layer.id] = y
            lo, hi = ranges.get(layer.id, (np.inf, -np.inf))
            ranges[layer.id] = (min(lo, y.min()), max(hi, y.max()))
            if layer.kind is LayerKind.MATMUL and layer.quantized:
                operands.setdefault(layer.id, []).append(filter_major_operand(reference.matmul_operand(layer, ins)))
    acts = {}
    for lid, (lo, hi) in ranges.items():
        acts[lid] = calibrate_affine([np.array([lo, hi])], ACT_BITS)
    return calibrate_affine(in_ranges, ACT_BITS), acts, {k: np.concatenate(v, axis=1) for k, v in operands.items()}


def _allocate(scores, groups, ratio):
    """APoT mask: top-scoring ``ratio`` of each group, totals balanced per layer."""
    n = scores.size
    size = n // groups
    total = int(np.floor(ratio * n + 0.5))
    base = np.floor(ratio * size + 1e-12).astype(int) * np.ones(groups, dtype=int)
    extra = total - int(base.sum())
    if extra > 0:
        base[:extra] += 1
    mask = np.zeros(n, dtype=bool)
    for g in range(groups):
        k = int(min(base[g], size))
        if k <= 0:
            continue
        s = scores[g * size:(g + 1) * size]
        order = np.lexsort((np.arange(size), -s))
        mask[g * size + order[:k]] = True
    return mask


def _weights_filter_major(layer, weights, operands):
    if layer.kind is LayerKind.MATMUL:
        return operands[layer.id]
    return weights[layer.id]


def assign_m2q(
    graph: NetworkGraph,
    weights: dict | None = None,
    target_ratio=0.5,
    bits_dw: int = 4,
    calibration=None,
    *,
    seed: int = 0,
    n_calib: int = 2,
    scope: str = "layer",
) -> QuantPlan:
    """Build an M2Q plan for ``graph``.

    ``target_ratio`` is the APoT fraction of computation-intensive filters
    (``"1:1"`` and ``0.5`` are equivalent). ``scope="layer"`` balances the
    ratio inside every layer (and every head/group of it); ``"network"`` ranks
    all computation-intensive filters together.
    """
    ratio = parse_ratio(target_ratio)
    if scope not in SCOPES:
        raise ConfigError(f"scope must be one of {SCOPES}, got {scope!r}")
    bad = validate_graph(graph)
    if bad:
        raise ConfigError(f"graph {graph.name!r} is invalid: {bad[0]}")
    if weights is None:
        weights = synthesize_weights(graph, seed)
    if calibration is None:
        calibration = synthetic_inputs(graph, n_calib, seed)
    input_params, acts, operands = _calibration_pass(graph, weights, calibration)

    ci_layers = []
    plans = {}
    for layer in graph.quantizable():
        w = _weights_filter_major(layer, weights, operands)
        if layer_category(layer) is LayerCategory.MEMORY_INTENSIVE:
            params = calibrate_affine(w, bits_dw, Granularity.PER_FILTER)
            lp = LayerPlan(layer.id, layer.kind, bits_dw, 1, np.zeros(w.shape[0], dtype=bool), params, np.ones(w.shape[0]))
        else:
            mse_u, mse_a = scheme_errors(w, UNIFORM_BITS)
            params = calibrate_affine(w, UNIFORM_BITS, Granularity.PER_FILTER)
            sc = apot_scale(w.reshape(w.shape[0], -1), axis=1)[:, 0]
            groups = layer.groups if layer.kind is LayerKind.MATMUL or layer.groups > 1 else 1
            lp = LayerPlan(layer.id, layer.kind, UNIFORM_BITS, groups, np.zeros(w.shape[0], dtype=bool), params, sc,
                           mse_uniform=mse_u, mse_apot=mse_a)
            ci_layers.append(lp)
        plans[layer.id] = lp

    if scope == "layer":
        for lp in ci_layers:
            lp.apot_mask = _allocate(lp.mse_uniform - lp.mse_apot, lp.groups, ratio)
    elif ci_layers:
        scores = np.concatenate([lp.mse_uniform - lp.mse_apot for lp in ci_layers])
        mask = _allocate(scores, 1, ratio)
        at = 0
        for lp in ci_layers:
            lp.apot_mask = mask[at:at + lp.n_filters]
            at += lp.n_filters

    for lid, lp in plans.items():
        if lp.kind is not LayerKind.MATMUL:
            lp.codes = lp.quantize_filters(weights[lid])

    return QuantPlan(
        network=graph.name,
        target_ratio=ratio,
        bits_dw=bits_dw,
        scope=scope,
        seed=seed,
        input_params=input_params,
        activations=acts,
        layers=plans,
        meta={"n_calib": len(calibration)},
    )


def uniform_plan(graph, weights=None, calibration=None, *, seed=0, n_calib=2, bits_dw=8):
    """All-uniform 8-bit baseline (depthwise layers at ``bits_dw``)."""
    return assign_m2q(graph, weights, 0.0, bits_dw, calibration, seed=seed, n_calib=n_calib)


def _params_json(p: QuantParams):
    return {"scale": p.scale.tolist(), "zero_point": p.zero_point.tolist()}


def _params_from(d, bits, gran):
    return QuantParams(np.asarray(d["scale"]), np.asarray(d["zero_point"]), bits, gran)


def _array_json(a):
    if a is None:
        return None
    a = np.ascontiguousarray(a, dtype=np.uint8)
    return {"dtype": "uint8", "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _array_from(d):
    if d is None:
        return None
    return np.frombuffer(base64.b64decode(d["data"]), dtype=np.uint8).reshape(d["shape"]).copy()


def plan_to_json(plan: QuantPlan) -> dict:
    apot, uni = plan.ratio_counts()
    layers = []
    for lid in sorted(plan.layers):
        lp = plan.layers[lid]
        layers.append({
            "layer_id": lid,
            "kind": lp.kind.value,
            "weight_bits": lp.weight_bits,
            "apot_bits": APOT_CODE_BITS,
            "groups": lp.groups,
            "schemes": lp.scheme_string,
            "n_apot": lp.n_apot,
            "n_uniform": lp.n_uniform,
            "scales": lp.uniform.scale.tolist(),
            "zero_points": lp.uniform.zero_point.tolist(),
            "apot_scales": lp.apot_scale.tolist(),
            "codes": _array_json(lp.codes),
        })
    return {
        "format": FORMAT,
        "network": plan.network,
        "target_ratio": plan.target_ratio,
        "bits_dw": plan.bits_dw,
        "act_bits": plan.act_bits,
        "scope": plan.scope,
        "seed": plan.seed,
        "achieved": {"apot": apot, "uniform": uni, "fraction": plan.achieved_ratio},
        "input": _params_json(plan.input_params),
        "activations": [dict(layer_id=lid, **_params_json(p)) for lid, p in sorted(plan.activations.items())],
        "layers": layers,
    }


def plan_from_json(doc: dict) -> QuantPlan:
    if doc.get("format") != FORMAT:
        raise ConfigError(f"not a plan document (format {doc.get('format')!r})")
    act_bits = doc.get("act_bits", ACT_BITS)
    layers = {}
    for d in doc["layers"]:
        mask = np.frombuffer(d["schemes"].encode("ascii"), dtype=np.uint8) == ord("A")
        layers[d["layer_id"]] = LayerPlan(
            layer_id=d["layer_id"],
            kind=LayerKind(d["kind"]),
            weight_bits=d["weight_bits"],
            groups=d["groups"],
            apot_mask=mask,
            uniform=QuantParams(np.asarray(d["scales"]), np.asarray(d["zero_points"]), d["weight_bits"], Granularity.PER_FILTER),
            apot_scale=np.asarray(d["apot_scales"], dtype=np.float64),
            codes=_array_from(d["codes"]),
        )
    return QuantPlan(
        network=doc["network"],
        target_ratio=doc["target_ratio"],
        bits_dw=doc["bits_dw"],
        scope=doc["scope"],
        seed=doc["seed"],
        input_params=_params_from(doc["input"], act_bits, Granularity.PER_LAYER),
        activations={a["layer_id"]: _params_from(a, act_bits, Granularity.PER_LAYER) for a in doc["activations"]},
        layers=layers,
        act_bits=act_bits,
    )


def write_plan(plan: QuantPlan, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(plan_to_json(plan), indent=1) + "\n")
    return path


def read_plan(path) -> QuantPlan:
    return plan_from_json(json.loads(Path(path).read_text()))
