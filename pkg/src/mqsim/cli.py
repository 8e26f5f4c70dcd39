"""``mqsim`` command line: quantize, simulate, sweep, compare, validate.

Exit codes: 0 success, 1 validation or configuration error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import jsonschema

from . import schemas
from .accel.config import HardwareConfig, read_config
from .accel.cost import report_to_csv, summary_table, write_report
from .accel.schedule import write_trace
from .execution.engine import run_network, write_error_report
from .netgraph import SUPPORTED, ConfigError, NotQuantizableError, build_efficientvit, validate_graph
from .netgraph.manifest import ManifestError, read_manifest, synthesize_weights
from .quant.plan import SCOPES, QuantPlan, assign_m2q, parse_ratio, read_plan, write_plan
from .runs import AXES, HW_AXES, SWEEP_FIELDS, compare, evaluation_inputs, simulate, sweep

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
FORMAT_SCHEMA = {
    "mqsim-network/1": "network",
    "mqsim-plan/1": "plan",
    "mqsim-trace/1": "trace",
    "mqsim-cost/1": "cost",
    "mqsim-compare/1": "compare",
}


class ValidationFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors: exit 1 rather than argparse's 2, which is reserved for I/O."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _dump(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def _load_model(args):
    """(graph, weights); weights come from the manifest blob or seeded synthesis."""
    if args.model:
        graph, weights = read_manifest(args.model)
    else:
        graph, weights = build_efficientvit(args.builder, args.resolution), None
    bad = validate_graph(graph)
    if bad:
        raise ValidationFailed("\n".join(str(v) for v in bad))
    if weights is None:
        weights = synthesize_weights(graph, args.seed)
    return graph, weights


def _ratio(args) -> float:
    if args.pure == "uniform":
        return 0.0
    if args.pure == "apot":
        return 1.0
    return parse_ratio(args.ratio)


def _hw(args) -> HardwareConfig:
    return read_config(args.hw_config) if args.hw_config else HardwareConfig()


def check_plan(graph, plan: QuantPlan) -> None:
    """Raise ConfigError when ``plan`` was not made for ``graph``."""
    ids = {layer.id: layer for layer in graph.layers}
    extra = sorted(set(plan.layers) - set(ids))
    if extra:
        raise ConfigError(f"plan has entries for layers not in {graph.name}: {extra[:5]}")
    for lid, entry in plan.layers.items():
        if entry.kind is not ids[lid].kind:
            raise ConfigError(f"layer {lid}: plan kind {entry.kind.value} does not match graph kind {ids[lid].kind.value}")


def _plan(args, graph, weights) -> QuantPlan:
    if getattr(args, "plan", None):
        plan = read_plan(args.plan)
        check_plan(graph, plan)
        return plan
    return assign_m2q(graph, weights, _ratio(args), args.dw_bits, seed=args.seed, n_calib=args.calib, scope=args.scope)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_quantize(args) -> int:
    graph, weights = _load_model(args)
    plan = _plan(args, graph, weights)
    out = _out(args)
    write_plan(plan, out / "plan.json")
    apot, uni = plan.ratio_counts()
    print(f"{graph.name}: APoT:Uniform = {apot}:{uni} (APoT fraction {plan.achieved_ratio:.4f})")
    if args.skip_errors or not graph.layers:
        return EXIT_OK
    x = evaluation_inputs(graph, 1, args.seed)[0]
    _, errors = run_network(graph, plan, x, weights)
    write_error_report(errors, out / "errors.json")
    if errors:
        print(f"output relative MSE {errors[-1].rel_mse:.4g} (layer {errors[-1].layer_id})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    graph, weights = _load_model(args)
    plan = _plan(args, graph, weights)
    sim = simulate(graph, plan, _hw(args), pipeline=not args.no_pipeline)
    out = _out(args)
    write_report(sim.report, out / f"cost.{args.format}", args.format)
    write_trace(sim.trace, out / f"trace.{args.format}", args.format)
    print(summary_table(sim.report))
    return EXIT_OK


def _values(axis: str, text: str | None):
    if text is None:
        return None
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"sweep axis {axis!r} needs at least one value")
    if axis == "ratio":
        return [parse_ratio(p.strip()) for p in parts]
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"sweep axis {axis!r} takes integer values, got {text!r}") from None


def cmd_sweep(args) -> int:
    graph, weights = _load_model(args)
    rows = sweep(
        graph, args.axis, _values(args.axis, args.values), weights, _hw(args),
        ratio=_ratio(args), bits_dw=args.dw_bits, seed=args.seed, n_calib=args.calib, n_eval=args.n_eval,
        pipeline=not args.no_pipeline,
    )
    out = _out(args)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        (out / "sweep.csv").write_text(buf.getvalue())
    else:
        (out / "sweep.json").write_text(_dump({"format": "mqsim-sweep/1", "network": graph.name, "rows": rows}))
    print(f"{'value':>8} {'error_proxy':>12} {'energy_mJ':>11} {'latency_ms':>11} {'edp_mJms':>10}")
    for r in rows:
        print(f"{r['value']:>8} {r['error_proxy']:>12.4g} {r['energy'] * 1e3:>11.5f} "
              f"{r['latency'] * 1e3:>11.4f} {r['edp'] * 1e6:>10.4g}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.all:
        targets = sorted(SUPPORTED)
    elif args.model:
        targets = [None]
    else:
        targets = [(args.builder, args.resolution)]
    cfg = _hw(args)
    results = []
    for target in targets:
        if target is not None:
            args.builder, args.resolution = target
        graph, weights = _load_model(args)
        mixed = _plan(args, graph, weights)
        results.append(compare(graph, weights, cfg, seed=args.seed, n_calib=args.calib,
                               pipeline=not args.no_pipeline, mixed_plan=mixed))
    out = _out(args)
    if args.format == "csv":
        rows = []
        for c in results:
            rows += [c.mixed, c.uniform]
        text = report_to_csv(rows)
        lines = text.splitlines()
        side = ["side"] + ["mixed", "uniform8"] * len(results)
        (out / "compare.csv").write_text("\n".join(f"{s},{ln}" for s, ln in zip(side, lines)) + "\n")
    else:
        doc = {"format": "mqsim-compare/1", "baseline": "uniform8", "models": [c.to_json() for c in results]}
        (out / "compare.json").write_text(_dump(doc))
    print(f"{'model':<22} {'compute':>8} {'energy':>8} {'latency':>8} {'edp':>8}   (mixed / uniform8)")
    for c in results:
        r = c.ratios
        print(f"{c.network:<22} {r['compute_energy']:>8.4f} {r['energy']:>8.4f} {r['latency']:>8.4f} {r['edp']:>8.4f}")
    return EXIT_OK


def _schema_for(doc) -> str:
    if isinstance(doc, list):
        return "errors"
    if isinstance(doc, dict) and doc.get("format") in FORMAT_SCHEMA:
        return FORMAT_SCHEMA[doc["format"]]
    if isinstance(doc, dict) and "R" in doc:
        return "hwconfig"
    raise ValidationFailed("cannot tell which schema applies (no known 'format' field)")


def cmd_validate(args) -> int:
    problems = []
    if args.model or args.builder_given:
        try:
            if args.model:
                graph, _ = read_manifest(args.model)
            else:
                graph = build_efficientvit(args.builder, args.resolution)
        except (ManifestError, ConfigError) as exc:
            problems.append(f"model: {exc}")
        else:
            problems += [f"{graph.name}: {v}" for v in validate_graph(graph)]
            if args.plan:
                try:
                    check_plan(graph, read_plan(args.plan))
                except (ConfigError, ValueError) as exc:
                    problems.append(f"{args.plan}: {exc}")
    docs = list(args.documents)
    if args.model:
        docs.append(args.model)
    if args.plan:
        docs.append(args.plan)
    if args.hw_config:
        docs.append(args.hw_config)
    for path in docs:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            problems.append(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
            continue
        try:
            name = _schema_for(doc)
        except ValidationFailed as exc:
            problems.append(f"{path}: {exc}")
            continue
        problems += [f"{path} [{name}] {m}" for m in schemas.errors(doc, name)]
    if args.hw_config:
        try:
            read_config(args.hw_config)
        except (ConfigError, ValueError, TypeError) as exc:
            problems.append(f"{args.hw_config}: {exc}")
    for p in problems:
        print(p)
    if problems:
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    src = p.add_argument_group("model")
    src.add_argument("--model", help="network manifest JSON (overrides --builder)")
    src.add_argument("--builder", choices=("B1", "B2"), default=None, help="built-in EfficientViT variant (default B1)")
    src.add_argument("--resolution", type=int, default=224)
    q = p.add_argument_group("quantization")
    q.add_argument("--ratio", default="0.5", help="APoT fraction of computation-intensive filters, e.g. 0.5 or 1:1")
    q.add_argument("--pure", choices=("uniform", "apot"), help="single-scheme plan (overrides --ratio)")
    q.add_argument("--dw-bits", type=int, default=4, help="depthwise weight bit-width")
    q.add_argument("--scope", choices=SCOPES, default="layer", help="ratio enforced per layer or across the network")
    q.add_argument("--calib", type=int, default=2, help="number of synthetic calibration inputs")
    q.add_argument("--plan", help="use an existing plan JSON instead of quantizing")
    p.add_argument("--hw-config", help="hardware config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--no-pipeline", action="store_true", help="run layers back to back without overlap")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mqsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="build a mixed quantization plan and per-layer error report")
    _common(p)
    p.add_argument("--skip-errors", action="store_true", help="do not run the integer pipeline for errors.json")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("simulate", help="schedule a plan on the accelerator and report cost")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep one quantization or hardware axis")
    _common(p)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--values", help="comma-separated settings (default: 3..8 for dw_bits, 0..1 by 0.25 for ratio)")
    p.add_argument("--n-eval", type=int, default=2, help="inputs averaged in the error proxy")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="mixed plan against the uniform 8-bit baseline")
    _common(p)
    p.add_argument("--baseline", choices=("uniform8",), default="uniform8")
    p.add_argument("--all", action="store_true", help="every supported variant/resolution")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="check a model, plan, config or emitted report")
    _common(p)
    p.add_argument("documents", nargs="*", help="JSON files to check against the shipped schemas")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.builder_given = args.builder is not None
    if args.builder is None:
        args.builder = "B1"
    if args.command == "sweep" and args.axis in HW_AXES and args.values is None:
        parser.error(f"--values is required for hardware axis {args.axis}")
    try:
        return args.func(args)
    except ValidationFailed as exc:
        print(f"error: invalid input:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ManifestError, ConfigError, NotQuantizableError, jsonschema.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, KeyError) as exc:
        print(f"error: invalid input: {exc!r}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
