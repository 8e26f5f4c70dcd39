"""Brute-force oracles for the closed-form cycle model and the scheduler.

``step_layer`` walks the engine loop nest one cycle at a time and records
which MACs each cycle performs, so it checks cycle counts, MAC coverage and
buffer traffic independently of the formulas in ``cycles``.
``simulate_events`` replays a schedule as discrete tile events with explicit
per-tile dependency lists built by enumerating input pixels.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

from ..netgraph.layers import LayerKind, LayerSpec
from .config import HardwareConfig


@dataclass(frozen=True)
class StepResult:
    cycles: int
    macs: int
    weight_reads: int
    act_reads: int
    duplicate_macs: int


def _step_dw(layer: LayerSpec, cfg: HardwareConfig, lanes: int) -> StepResult:
    c, h, w = layer.input_shape
    kh, kw = layer.kernel
    ph, pw = layer.padding
    ho, wo = layer.spatial_out
    s = layer.stride
    pixels = [(y, x) for y in range(ho) for x in range(wo)]
    seen = set()
    cycles = dup = 0
    weights = set()
    act = 0
    for g0 in range(0, len(pixels), lanes):
        group = pixels[g0:g0 + lanes]
        for c0 in range(0, c, cfg.M):
            chans = range(c0, min(c, c0 + cfg.M))
            for r0 in range(0, kh, cfg.R):
                rows = range(r0, min(kh, r0 + cfg.R))
                loaded = set()
                for j in range(kw):
                    cycles += 1
                    for ch in chans:
                        for (y, x) in group:
                            for i in rows:
                                key = (ch, y, x, i, j)
                                if key in seen:
                                    dup += 1
                                seen.add(key)
                                weights.add((ch, i, j))
                                iy, ix = y * s + i - ph, x * s + j - pw
                                if 0 <= iy < h and 0 <= ix < w:
                                    loaded.add((ch, iy, ix))
                act += len(loaded)
    return StepResult(cycles, len(seen), len(weights), act, dup)


def _step_filters(layer: LayerSpec, counts, lanes_c: int, lanes_f: int) -> StepResult:
    if layer.kind is LayerKind.PWCONV:
        groups, cg, p = layer.groups, layer.in_channels, layer.out_pixels
    else:
        groups, p, cg = layer.tensor_shape
    seen = set()
    cycles = dup = act = 0
    if layer.kind is LayerKind.MATMUL:
        order = [(g, px) for g in range(groups) for px in range(p)]
    else:
        order = [(g, px) for px in range(p) for g in range(groups)]
    for g, px in order:
        nf = int(counts[g])
        for f0 in range(0, nf, lanes_f):
            filt = range(f0, min(nf, f0 + lanes_f))
            for c0 in range(0, cg, lanes_c):
                chans = range(c0, min(cg, c0 + lanes_c))
                cycles += 1
                act += len(chans)
                for f in filt:
                    for ch in chans:
                        key = (g, px, f, ch)
                        if key in seen:
                            dup += 1
                        seen.add(key)
    return StepResult(cycles, len(seen), len(seen), act, dup)


def step_layer(layer: LayerSpec, cfg: HardwareConfig, engine: str, counts=None, bits: int = 4) -> StepResult:
    """Cycle-by-cycle walk of one layer portion.

    ``engine`` is ``"single"`` (DWConv), ``"merged"`` or ``"sat"``; ``counts``
    gives the per-group filter counts for the last two.
    """
    if engine == "single":
        return _step_dw(layer, cfg, cfg.T if bits <= 4 else cfg.T // 2)
    if engine == "merged":
        return _step_filters(layer, counts, cfg.R * cfg.M, cfg.T // 2)
    if engine == "sat":
        return _step_filters(layer, counts, cfg.N, cfg.S_tiles)
    raise ValueError(f"unknown engine {engine!r}")


@dataclass
class SimTask:
    """One layer portion: tile durations on a unit plus per-tile dependency lists.

    ``deps[j]`` lists ``(task index, tile index)`` pairs that must finish
    before tile ``j`` starts.
    """

    unit: str
    durations: list
    deps: list


def simulate_events(tasks: list) -> list:
    """Finish time of every tile; tasks on the same unit run in list order."""
    finish = [[None] * len(t.durations) for t in tasks]
    queues = {}
    for i, t in enumerate(tasks):
        queues.setdefault(t.unit, []).append(i)
    pos = {u: [0, 0] for u in queues}  # task slot, tile index
    busy = dict.fromkeys(queues, False)
    events = []
    now = 0

    def advance(unit):
        slot, tile = pos[unit]
        q = queues[unit]
        while slot < len(q) and tile >= len(tasks[q[slot]].durations):
            slot, tile = slot + 1, 0
        pos[unit] = [slot, tile]
        return slot < len(q)

    def try_start(unit):
        if busy[unit] or not advance(unit):
            return False
        slot, tile = pos[unit]
        ti = queues[unit][slot]
        for dt, dj in tasks[ti].deps[tile]:
            f = finish[dt][dj]
            if f is None or f > now:
                return False
        busy[unit] = True
        heapq.heappush(events, (now + tasks[ti].durations[tile], unit, ti, tile))
        return True

    while True:
        started = True
        while started:
            started = False
            for u in queues:
                started |= try_start(u)
        if not events:
            break
        now = events[0][0]
        while events and events[0][0] == now:
            t, unit, ti, tile = heapq.heappop(events)
            finish[ti][tile] = t
            busy[unit] = False
            pos[unit][1] += 1
    if any(f is None for row in finish for f in row):
        raise RuntimeError("deadlock: some tiles never became ready")
    return finish


def pixel_deps_bruteforce(layer: LayerSpec, tile_pixels: int, producer_tile_pixels: int) -> list:
    """Producer tiles read by each consumer tile, by enumerating every input pixel touched."""
    _, h, w = layer.input_shape
    ho, wo = layer.spatial_out
    s = layer.stride
    if layer.kind is LayerKind.DWCONV:
        kh, kw = layer.kernel
        ph, pw = layer.padding
    else:
        kh = kw = 1
        ph = pw = 0
    out = []
    pix = [(y, x) for y in range(ho) for x in range(wo)]
    for t0 in range(0, len(pix), tile_pixels):
        need = set()
        for (y, x) in pix[t0:t0 + tile_pixels]:
            for i in range(kh):
                for j in range(kw):
                    iy, ix = y * s + i - ph, x * s + j - pw
                    if 0 <= iy < h and 0 <= ix < w:
                        need.add((iy * w + ix) // producer_tile_pixels)
        out.append(sorted(need))
    return out


def build_tasks(graph, plan, cfg: HardwareConfig, assignments=None) -> list:
    """Tile tasks of a whole schedule, in the same engine order the scheduler uses."""
    from .schedule import assign_engines, dependencies, layer_work

    if assignments is None:
        assignments = assign_engines(graph, plan)
    tasks, works, index = [], [], {}
    for layer in graph.layers:
        if layer.id not in assignments:
            continue
        deps = dependencies(graph, layer)
        mine = []
        for w in layer_work(layer, assignments[layer.id], cfg):
            if w.n_tiles == 0:
                continue
            tile_deps = [[] for _ in range(w.n_tiles)]
            for pid, kind in deps:
                for pt in index.get(pid, ()):
                    n_prod = len(tasks[pt].durations)
                    if kind == "barrier":
                        for lst in tile_deps:
                            lst.extend((pt, k) for k in range(n_prod))
                    elif kind == "head":
                        for j, lst in enumerate(tile_deps):
                            lst.append((pt, j))
                    else:
                        need = pixel_deps_bruteforce(layer, w.tile_pixels, works[pt].tile_pixels)
                        for lst, ks in zip(tile_deps, need):
                            lst.extend((pt, k) for k in ks)
            mine.append(len(tasks))
            tasks.append(SimTask(w.engine.unit, [int(c) for c in w.tile_cycles], tile_deps))
            works.append(w)
        index[layer.id] = mine
    return tasks


def event_makespan(graph, plan, cfg: HardwareConfig, assignments=None) -> int:
    finish = simulate_events(build_tasks(graph, plan, cfg, assignments))
    return max((row[-1] for row in finish if row), default=0)
