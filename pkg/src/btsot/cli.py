"""Command line entry point: ``btsot check|run|plot``.

Exit codes: 0 success, 1 scenario failure/timeout or tree errors,
2 configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from xml.sax.saxutils import escape

import yaml

from .bt.core import write_tick_log
from .errors import ConfigurationError
from .scenario import DEFAULT_SCENARIO, ScenarioTreeError, load_config, load_scenario
from .sim import (ROOT_SUCCESS, Table, TraceFormatError, dump_jsonl, fmt, read_trace, run,
                  write_trace)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

TRACE_FILE = "trace.csv"
TICKS_FILE = "ticks.jsonl"
SUMMARY_FILE = "summary.json"
SOLVER_FILE = "solver.jsonl"


def _err(msg: str) -> None:
    print(f"btsot: {msg}", file=sys.stderr)


def cmd_check(tree_path=None, scenario_path=DEFAULT_SCENARIO) -> int:
    """Parse and validate a tree against the scenario catalogs."""
    try:
        sc = load_scenario(scenario_path, tree_path=tree_path)
    except ScenarioTreeError as exc:
        for d in exc.diagnostics:
            print(f"{tree_path or 'tree'}:{d}")
        return EXIT_FAIL
    except (ConfigurationError, OSError, yaml.YAMLError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    n = sum(1 for _ in sc.tree.walk())
    print(f"ok: {n} nodes, {len(sc.tasks)} tasks, {len(sc.conditions)} conditions, "
          f"{len(sc.actions)} commands")
    return EXIT_OK


def cmd_run(scenario_path=DEFAULT_SCENARIO, duration=120.0, out_dir="out", bt_hz=None,
            sot_hz=None, debug_solver=False, tree_path=None) -> int:
    """Simulate a scenario and write trace, tick log and summary into ``out_dir``."""
    if duration < 0:
        _err("duration must be >= 0")
        return EXIT_CONFIG
    try:
        sc = load_scenario(scenario_path, tree_path=tree_path, bt_hz=bt_hz, sot_hz=sot_hz)
    except ScenarioTreeError as exc:
        for d in exc.diagnostics:
            _err(str(d))
        return EXIT_CONFIG
    except (ConfigurationError, OSError, yaml.YAMLError) as exc:
        _err(str(exc))
        return EXIT_CONFIG

    result = run(sc, duration, debug_solver=debug_solver)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / TRACE_FILE, "w", encoding="utf-8", newline="") as fh:
            write_trace(result.trace, sc.model.n, fh)
        with open(out / TICKS_FILE, "w", encoding="utf-8") as fh:
            write_tick_log(result.tick_traces, fh)
        summary = result.summary()
        summary["bt_hz"] = sc.schedule.bt_hz
        summary["sot_hz"] = sc.schedule.sot_hz
        (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
        if debug_solver:
            with open(out / SOLVER_FILE, "w", encoding="utf-8") as fh:
                dump_jsonl(result.solver_log, fh)
    except OSError as exc:
        _err(f"cannot write outputs: {exc}")
        return EXIT_CONFIG
    print(f"{result.outcome}: t={summary['completion_time']} "
          f"cube error={summary['final_cube_error']} ticks={result.bt_ticks} "
          f"solves={result.solves}")
    return EXIT_OK if result.outcome == ROOT_SUCCESS else EXIT_FAIL


# -- plotting ------------------------------------------------------------------------

def render_svg(records, table, waypoints, place_center, place_radius, width=800) -> str:
    """Top view: base and ee paths, table, waypoints B/C, cube start, place circle."""
    if not records:
        raise ValueError("trace has no records")
    base = [(r["base_x"], r["base_y"]) for r in records]
    ee = [(r["ee_x"], r["ee_y"]) for r in records]
    cube0 = (records[0]["cube_x"], records[0]["cube_y"])
    corners = table.corners()
    marks = [waypoints[k][:2] for k in ("B", "C") if k in waypoints]
    pts = base + ee + corners + marks + [cube0, tuple(place_center)]
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    pad = 0.1
    x0, x1 = min(xs) - pad, max(xs) + pad
    y0, y1 = min(ys) - pad, max(ys) + pad
    s = width / max(x1 - x0, y1 - y0)
    height = int(round((y1 - y0) * s))
    width = int(round((x1 - x0) * s))

    def P(x, y):
        return fmt((x - x0) * s), fmt((y1 - y) * s)

    def poly(path, color, cls):
        if len(path) == 1:
            path = path * 2
        coords = " ".join(",".join(P(x, y)) for x, y in path)
        return (f'<polyline class="{cls}" points="{coords}" fill="none" '
                f'stroke="{color}" stroke-width="2"/>')

    tx, ty = P(corners[3][0], corners[3][1])
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect class="table" x="{tx}" y="{ty}" width="{fmt(table.size[0] * s)}" '
        f'height="{fmt(table.size[1] * s)}" fill="#d8c8a8" stroke="#7a6a48"/>',
    ]
    cx, cy = P(*place_center)
    out.append(f'<circle class="place" cx="{cx}" cy="{cy}" r="{fmt(place_radius * s)}" '
               'fill="none" stroke="green" stroke-width="2"/>')
    half = 0.015 * s
    qx, qy = P(*cube0)
    out.append(f'<rect class="cube-start" x="{fmt(float(qx) - half)}" y="{fmt(float(qy) - half)}" '
               f'width="{fmt(2 * half)}" height="{fmt(2 * half)}" fill="red"/>')
    out.append(poly(base, "#1f4e9c", "base-path"))
    out.append(poly(ee, "#d2691e", "ee-path"))
    for name in ("B", "C"):
        if name in waypoints:
            wx, wy = P(*waypoints[name][:2])
            out.append(f'<circle class="waypoint" cx="{wx}" cy="{wy}" r="4" fill="black"/>')
            out.append(f'<text x="{fmt(float(wx) + 6)}" y="{fmt(float(wy) - 6)}" '
                       f'font-size="14">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(trace_path, out_path, scenario_path=DEFAULT_SCENARIO) -> int:
    try:
        with open(trace_path, encoding="utf-8", newline="") as fh:
            records = read_trace(fh)
        data, _ = load_config(scenario_path)
        t = data["table"]
        table = Table(tuple(t["center"]), tuple(t["size"]), float(t["height"]))
        waypoints = {k: tuple(v) for k, v in data.get("waypoints", {}).items()}
        place = data["place_target"]
    except TraceFormatError as exc:
        _err(f"{trace_path}: {exc}")
        return EXIT_CONFIG
    except (ConfigurationError, OSError, yaml.YAMLError, KeyError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if not records:
        _err(f"{trace_path}: trace has no records")
        return EXIT_CONFIG
    svg = render_svg(records, table, waypoints, tuple(place["center"]),
                     float(place.get("radius", 0.025)))
    try:
        Path(out_path).write_text(svg, encoding="utf-8")
    except OSError as exc:
        _err(f"cannot write {out_path}: {exc}")
        return EXIT_CONFIG
    print(f"wrote {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="btsot", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and details")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="parse and validate a tree against a scenario")
    c.add_argument("tree", nargs="?", help="tree file (default: the scenario's tree)")
    c.add_argument("--scenario", default=str(DEFAULT_SCENARIO))

    r = sub.add_parser("run", help="simulate a scenario")
    r.add_argument("--scenario", default=str(DEFAULT_SCENARIO))
    r.add_argument("--tree", help="override the scenario's tree file")
    r.add_argument("--duration", type=float, default=120.0, help="simulated seconds")
    r.add_argument("--out", default="out", help="output directory")
    r.add_argument("--bt-hz", type=int)
    r.add_argument("--sot-hz", type=int)
    r.add_argument("--debug-solver", action="store_true", help="write solver.jsonl")

    g = sub.add_parser("plot", help="draw a trace as SVG")
    g.add_argument("--trace", required=True)
    g.add_argument("--out", default="trace.svg")
    g.add_argument("--scenario", default=str(DEFAULT_SCENARIO))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "check":
        return cmd_check(args.tree, args.scenario)
    if args.command == "run":
        return cmd_run(args.scenario, args.duration, args.out, args.bt_hz, args.sot_hz,
                       args.debug_solver, args.tree)
    return cmd_plot(args.trace, args.out, args.scenario)


if __name__ == "__main__":
    sys.exit(main())
