"""Network manifest (JSON) and weight blob (little-endian float32) I/O."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import Activation, LayerKind, LayerSpec, NetworkGraph, weight_shape

FORMAT = "mqsim-network/1"
_BLOB_DTYPE = np.dtype("<f4")


class ManifestError(ValueError):
    """Malformed network manifest; message carries file/line or field context."""


def synthesize_weights(graph: NetworkGraph, seed: int = 0) -> dict:
    """Seeded float32-representable weights for every layer with static weights.

    Each filter draws from a uniform or a Gaussian law with He-scaled spread,
    so a layer mixes both filter populations. A layer's stream depends only on
    ``(seed, layer.id)``.
    """
    weights = {}
    for layer in graph.layers:
        shp = weight_shape(layer)
        if shp is None:
            continue
        rng = np.random.default_rng([int(seed), layer.id])
        fan_in = int(np.prod(shp[1:]))
        std = np.sqrt(2.0 / fan_in)
        if layer.name.endswith((".point", ".proj")):
            # residual branch outputs start small, like a zero-ish BN gamma
            std *= 0.5
        gauss = rng.random(shp[0]) < 0.5
        w = np.where(
            gauss.reshape((-1,) + (1,) * (len(shp) - 1)),
            rng.normal(0.0, std, size=shp),
            rng.uniform(-std * np.sqrt(3.0), std * np.sqrt(3.0), size=shp),
        )
        weights[layer.id] = w.astype(np.float32).astype(np.float64)
    return weights


def _layer_to_json(layer: LayerSpec) -> dict:
    d = {
        "id": layer.id,
        "kind": layer.kind.value,
        "input_shape": list(layer.input_shape),
        "kernel": list(layer.kernel),
        "filters": layer.filters,
        "stride": layer.stride,
        "producer_ids": list(layer.producer_ids),
        "activation": layer.activation.value,
    }
    if layer.groups != 1:
        d["groups"] = layer.groups
    if layer.op:
        d["op"] = layer.op
    if layer.attrs:
        d["attrs"] = dict(layer.attrs)
    if not layer.quantized:
        d["quantized"] = False
    if layer.name:
        d["name"] = layer.name
    return d


def graph_to_json(graph: NetworkGraph) -> dict:
    return {
        "format": FORMAT,
        "name": graph.name,
        "input_resolution": list(graph.input_resolution),
        "input_shape": list(graph.input_shape),
        "layers": [_layer_to_json(l) for l in graph.layers],
    }


def write_manifest(graph: NetworkGraph, path, weights: dict | None = None) -> Path:
    """Write ``graph`` to ``path``; weights go to a sibling ``.bin`` blob."""
    path = Path(path)
    doc = graph_to_json(graph)
    if weights is not None:
        blob_path = path.with_suffix(".bin")
        offset = 0
        with open(blob_path, "wb") as fh:
            for entry, layer in zip(doc["layers"], graph.layers):
                if layer.id not in weights:
                    continue
                raw = np.ascontiguousarray(weights[layer.id], dtype=_BLOB_DTYPE).tobytes()
                fh.write(raw)
                entry["weights"] = {"offset": offset, "length": len(raw)}
                offset += len(raw)
        doc["weights_blob"] = blob_path.name
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


_REQUIRED = ("id", "kind", "input_shape", "producer_ids")


def _field(i, name):
    return f"layers[{i}].{name}"


def _parse_layer(i, raw) -> LayerSpec:
    if not isinstance(raw, dict):
        raise ManifestError(f"layers[{i}]: expected an object, got {type(raw).__name__}")
    for key in _REQUIRED:
        if key not in raw:
            raise ManifestError(f"{_field(i, key)}: missing required field")
    try:
        kind = LayerKind(raw["kind"])
    except ValueError:
        raise ManifestError(f"{_field(i, 'kind')}: unknown kind {raw['kind']!r}") from None
    try:
        act = Activation(raw.get("activation", "none"))
    except ValueError:
        raise ManifestError(f"{_field(i, 'activation')}: unknown activation {raw.get('activation')!r}") from None
    for key in ("input_shape", "kernel", "producer_ids"):
        val = raw.get(key, [1, 1] if key == "kernel" else [])
        if not isinstance(val, list) or not all(isinstance(v, int) for v in val):
            raise ManifestError(f"{_field(i, key)}: expected a list of integers")
    for key in ("id", "filters", "stride", "groups"):
        if key in raw and (not isinstance(raw[key], int) or isinstance(raw[key], bool)):
            raise ManifestError(f"{_field(i, key)}: expected an integer")
    try:
        return _layer_from(raw, kind, act)
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"layers[{i}] (id {raw['id']}): {exc}") from None


def _layer_from(raw, kind, act) -> LayerSpec:
    return LayerSpec(
        id=raw["id"],
        kind=kind,
        input_shape=tuple(raw["input_shape"]),
        kernel=tuple(raw.get("kernel", (1, 1))),
        filters=raw.get("filters", 0),
        stride=raw.get("stride", 1),
        producer_ids=tuple(raw["producer_ids"]),
        activation=act,
        groups=raw.get("groups", 1),
        op=raw.get("op", ""),
        attrs=raw.get("attrs", {}),
        quantized=raw.get("quantized", True),
        name=raw.get("name", ""),
    )


def graph_from_json(doc: dict) -> NetworkGraph:
    if not isinstance(doc, dict):
        raise ManifestError("manifest root must be an object")
    for key in ("name", "input_shape", "layers"):
        if key not in doc:
            raise ManifestError(f"{key}: missing required field")
    if not isinstance(doc["layers"], list):
        raise ManifestError("layers: expected a list")
    layers = [_parse_layer(i, raw) for i, raw in enumerate(doc["layers"])]
    shp = doc["input_shape"]
    if not isinstance(shp, list) or not all(isinstance(v, int) for v in shp):
        raise ManifestError("input_shape: expected a list of integers")
    try:
        return NetworkGraph(
            name=doc["name"],
            input_resolution=tuple(doc.get("input_resolution", shp[1:])),
            input_shape=tuple(shp),
            layers=layers,
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"manifest: {exc}") from None


def read_manifest(path):
    """Load ``(graph, weights)``; ``weights`` is None when no blob is referenced."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    graph = graph_from_json(doc)
    blob_name = doc.get("weights_blob")
    if not blob_name:
        return graph, None
    blob = (path.parent / blob_name).read_bytes()
    weights = {}
    for i, (raw, layer) in enumerate(zip(doc["layers"], graph.layers)):
        ref = raw.get("weights")
        if ref is None:
            continue
        off, length = ref.get("offset"), ref.get("length")
        if not isinstance(off, int) or not isinstance(length, int) or off < 0 or off + length > len(blob):
            raise ManifestError(f"{_field(i, 'weights')}: range ({off}, {length}) outside blob of {len(blob)} bytes")
        shp = weight_shape(layer)
        arr = np.frombuffer(blob, dtype=_BLOB_DTYPE, count=length // 4, offset=off)
        if shp is None or arr.size != int(np.prod(shp)):
            raise ManifestError(f"{_field(i, 'weights')}: {arr.size} values do not match weight shape {shp}")
        weights[layer.id] = arr.reshape(shp).astype(np.float64)
    return graph, weights
