"""Deterministic multi-rate executive for the mobile pick-and-place scenario.

Logical time advances in base steps of ``1 / f_sot``.  Each step runs, in
order: BT tick (if due), controller steps (if due), stack build + HQP solve,
state integration, attachment update and trace append.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bt.core import BehaviorTree, Status, TickContext
from .controllers import ControllerRegistry, GripperController, PlatformController
from .errors import ConfigurationError
from .hqp import HqpProblem, solve
from .robot import RobotState, ee_transform, integrate_state
from .tasks import ActiveTaskRegistry, build_stack

log = logging.getLogger(__name__)

CUBE_EDGE = 0.030
BACKGROUND_OWNER = "<scenario>"

ROOT_SUCCESS = "root-success"
ROOT_FAILURE = "root-failure"
TIMEOUT = "timeout"


def fmt(x) -> str:
    """Fixed 9-significant-digit rendering used by every numeric output."""
    return f"{float(x):.9g}"


# -- world ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Table:
    center: tuple  # (x, y)
    size: tuple    # full extents (x, y)
    height: float  # top surface z

    def distance(self, xy) -> float:
        """Planar distance from a point to the table footprint (0 inside)."""
        dx = max(abs(xy[0] - self.center[0]) - 0.5 * self.size[0], 0.0)
        dy = max(abs(xy[1] - self.center[1]) - 0.5 * self.size[1], 0.0)
        return float(np.hypot(dx, dy))

    def contains(self, xy) -> bool:
        return (abs(xy[0] - self.center[0]) <= 0.5 * self.size[0]
                and abs(xy[1] - self.center[1]) <= 0.5 * self.size[1])

    def corners(self):
        cx, cy = self.center
        hx, hy = 0.5 * self.size[0], 0.5 * self.size[1]
        return [(cx - hx, cy - hy), (cx + hx, cy - hy), (cx + hx, cy + hy), (cx - hx, cy + hy)]


@dataclass
class WorldState:
    table: Table
    cube: np.ndarray               # 4x4 world pose of the cube center
    place_center: np.ndarray       # (x, y) on the table
    place_radius: float
    waypoints: dict
    cube_edge: float = CUBE_EDGE
    grasp: Optional[np.ndarray] = None  # ee -> cube transform while attached
    time: float = 0.0

    def __post_init__(self):
        if self.cube_edge != CUBE_EDGE:
            raise ConfigurationError("cube edge is fixed at 0.030 m")
        self.cube = np.asarray(self.cube, dtype=float)
        self.place_center = np.asarray(self.place_center, dtype=float)

    @property
    def attached(self) -> bool:
        return self.grasp is not None

    @property
    def cube_position(self) -> np.ndarray:
        return self.cube[:3, 3]

    @property
    def place_point(self) -> np.ndarray:
        """Cube-center position when resting on the place target."""
        return np.array([*self.place_center, self.table.height + 0.5 * self.cube_edge])

    def copy(self) -> "WorldState":
        return WorldState(self.table, self.cube.copy(), self.place_center.copy(), self.place_radius,
                          dict(self.waypoints), self.cube_edge,
                          None if self.grasp is None else self.grasp.copy(), self.time)


def update_attachment(world: WorldState, ee_T: np.ndarray, was_closed: bool, is_closed: bool,
                      eps_grasp: float) -> WorldState:
    """Kinematic grasp rule.

    Attach when the gripper becomes closed with the end-effector within
    ``eps_grasp`` of the cube center (grasp transform frozen then); detach
    when it opens.  A released cube keeps its pose, except that its center
    snaps to resting height when it is over the table footprint (also from
    slightly below, absorbing end-effector tracking error).
    """
    if eps_grasp <= 0:
        raise ValueError("eps_grasp must be positive")
    w = world.copy()
    if is_closed and not was_closed and not w.attached:
        if np.linalg.norm(ee_T[:3, 3] - w.cube_position) <= eps_grasp:
            w.grasp = np.linalg.inv(ee_T) @ w.cube
    elif was_closed and not is_closed and w.attached:
        w.cube = ee_T @ w.grasp
        w.grasp = None
        rest = w.table.height + 0.5 * w.cube_edge
        if w.table.contains(w.cube[:2, 3]):
            w.cube[2, 3] = rest
    if w.attached:
        w.cube = ee_T @ w.grasp
    return w


# -- predicates ---------------------------------------------------------------------

def robot_close_to_table(base_pose, table: Table, threshold: float) -> bool:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return table.distance(np.asarray(base_pose)[:2]) <= threshold


def make_condition(spec: dict):
    """Build ``fn(ctx) -> bool`` from a scenario condition entry."""
    kind = spec.get("type")
    if kind == "close_to_table":
        thr = float(spec["threshold"])
        return lambda ctx: robot_close_to_table(ctx.state.base, ctx.world.table, thr)
    if kind == "cube_attached":
        return lambda ctx: ctx.world.attached
    if kind == "cube_on_target":
        def on_target(ctx):
            w = ctx.world
            d = np.linalg.norm(w.cube_position[:2] - w.place_center)
            resting = abs(w.cube_position[2] - w.place_point[2]) <= 1e-9
            return (not w.attached) and resting and d <= w.place_radius
        return on_target
    if kind in ("ee_near", "cube_near"):
        radius = float(spec["radius"])
        frame = spec.get("frame", "cube")
        below = float(spec.get("below", 0.0))  # allowed drop under the reference height

        def near(ctx):
            w = ctx.world
            ref = w.cube_position if frame == "cube" else w.place_point
            if kind == "ee_near":
                p = ee_transform(ctx.model, ctx.state.q, ctx.state.base)[:3, 3]
            else:
                p = w.cube_position
            return bool(p[2] >= ref[2] - below - 1e-9 and np.linalg.norm(p - ref) <= radius)
        return near
    raise ConfigurationError(f"unknown condition type {kind!r}")


# -- schedule ------------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    bt_hz: int = 10
    sot_hz: int = 200
    controller_hz: dict = field(default_factory=lambda: {"platform": 100, "gripper": 100})

    def __post_init__(self):
        rates = {"bt": self.bt_hz, "sot": self.sot_hz, **self.controller_hz}
        for name, f in rates.items():
            if not isinstance(f, (int, np.integer)) or f <= 0:
                raise ConfigurationError(f"{name} frequency must be a positive integer, got {f!r}")
            if self.sot_hz % f:
                raise ConfigurationError(f"{name} frequency {f} Hz does not divide {self.sot_hz} Hz")
        if self.sot_hz < self.bt_hz:
            raise ConfigurationError("the SoT loop must run at least as fast as the BT")

    @property
    def dt(self) -> float:
        return 1.0 / self.sot_hz

    def period(self, loop: str) -> int:
        f = {"bt": self.bt_hz, "sot": self.sot_hz, **self.controller_hz}[loop]
        return self.sot_hz // f


def schedule_fire(schedule: Schedule, step: int) -> set:
    due = {"sot"}
    for loop in ("bt", *schedule.controller_hz):
        if step % schedule.period(loop) == 0:
            due.add(loop)
    return due


# -- trace ----------------------------------------------------------------------------

@dataclass
class TraceRecord:
    time: float
    base: np.ndarray
    base_twist: np.ndarray
    q: np.ndarray
    ee: np.ndarray
    cube: np.ndarray
    attached: bool
    active: tuple
    platform_target: Optional[str]
    platform_moving: bool
    gripper: float
    gate: bool
    residuals: list


def trace_header(n: int) -> list[str]:
    return (["time", "base_x", "base_y", "base_theta", "base_vx", "base_vy", "base_omega"]
            + [f"q{i + 1}" for i in range(n)]
            + ["ee_x", "ee_y", "ee_z", "cube_x", "cube_y", "cube_z", "attached",
               "active_tasks", "platform_target", "platform_moving", "gripper_aperture",
               "close_to_table", "residuals"])


def trace_row(r: TraceRecord) -> list[str]:
    return ([fmt(r.time)] + [fmt(v) for v in r.base] + [fmt(v) for v in r.base_twist]
            + [fmt(v) for v in r.q] + [fmt(v) for v in r.ee] + [fmt(v) for v in r.cube]
            + [str(int(r.attached)), ";".join(r.active), r.platform_target or "",
               str(int(r.platform_moving)), fmt(r.gripper), str(int(r.gate)),
               ";".join(f"{lvl}:{fmt(v)}" for lvl, v in r.residuals)])


def write_trace(records, n: int, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(trace_header(n))
    for r in records:
        w.writerow(trace_row(r))


class TraceFormatError(ValueError):
    def __init__(self, line: int, msg: str):
        self.line = line
        super().__init__(f"line {line}: {msg}")


def read_trace(fh) -> list[dict]:
    """Parse a trace table into dicts of floats/strings; errors carry line numbers."""
    rows = list(csv.reader(fh))
    if not rows:
        raise TraceFormatError(1, "empty trace file")
    header = rows[0]
    required = {"time", "base_x", "base_y", "ee_x", "ee_y", "ee_z", "cube_x", "cube_y"}
    missing = required - set(header)
    if missing:
        raise TraceFormatError(1, f"missing columns {sorted(missing)}")
    text_cols = {"active_tasks", "platform_target", "residuals"}
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise TraceFormatError(lineno, f"expected {len(header)} fields, found {len(row)}")
        rec = {}
        for key, val in zip(header, row):
            if key in text_cols:
                rec[key] = val
                continue
            try:
                rec[key] = float(val)
            except ValueError:
                raise TraceFormatError(lineno, f"bad number {val!r} in column {key}") from None
        out.append(rec)
    return out


# -- executive -----------------------------------------------------------------------------

@dataclass
class RunResult:
    outcome: str
    trace: list
    tick_traces: list
    bt_ticks: int
    solves: int
    completion_time: Optional[float]
    final_cube_error: float
    solver_log: list = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max((v for r in self.trace for _, v in r.residuals), default=0.0)

    def summary(self) -> dict:
        return {
            "outcome": self.outcome,
            "completion_time": None if self.completion_time is None else fmt(self.completion_time),
            "final_cube_error": fmt(self.final_cube_error),
            "bt_ticks": self.bt_ticks,
            "hqp_solves": self.solves,
            "max_residual": fmt(self.max_residual),
        }


class Simulation:
    """Stepwise executive; ``scenario`` comes from :mod:`btsot.scenario`."""

    def __init__(self, scenario, debug_solver: bool = False):
        self.sc = scenario
        self.model = scenario.model
        self.schedule = scenario.schedule
        self.state = RobotState(q=scenario.q_start, base=scenario.base_start,
                                gripper_aperture=scenario.gripper_start)
        self.world = scenario.make_world()
        self.controllers = ControllerRegistry(
            PlatformController(dict(self.world.waypoints), scenario.platform_speed,
                               scenario.goal_radius),
            GripperController(scenario.gripper_travel, aperture=scenario.gripper_start),
        )
        self.registry = ActiveTaskRegistry()
        for tid in scenario.background:
            self.registry.add(scenario.tasks[tid], owner=BACKGROUND_OWNER)
        self.tree = BehaviorTree(scenario.tree, scenario.conditions, scenario.actions,
                                 scenario.tasks)
        self.gate_fn = scenario.gate
        self.gate = False
        self.debug_solver = debug_solver
        self.solver_log: list = []
        self.trace: list[TraceRecord] = []
        self.step_index = 0
        self.bt_ticks = 0
        self.solves = 0
        self.root_status: Optional[Status] = None

    @property
    def time(self) -> float:
        return self.step_index * self.schedule.dt

    def context(self) -> TickContext:
        return TickContext(registry=self.registry, world=self.world, state=self.state,
                           model=self.model, controllers=self.controllers, time=self.time)

    def step(self) -> None:
        k = self.step_index
        dt = self.schedule.dt
        self.world.time = self.time
        due = schedule_fire(self.schedule, k)

        if "bt" in due:
            ctx = self.context()
            self.root_status = self.tree.tick(ctx)
            self.bt_ticks += 1
            self.controllers.dispatch(ctx.commands)
            if self.gate_fn is not None:
                self.gate = bool(self.gate_fn(ctx))

        if "platform" in due:
            self.controllers.platform.step(self.state.base)
        was_closed = self.controllers.gripper.aperture <= 0.0
        if "gripper" in due:
            self.controllers.gripper.step(1.0 / self.schedule.controller_hz["gripper"])

        stack = build_stack(self.registry, self.model, self.state, self.world)
        sol = solve(HqpProblem(stack, self.model.n, self.model.v_max,
                               self.sc.damping, self.sc.regularization))
        self.solves += 1
        if sol.status != "optimal":
            log.warning("t=%.3f solver status %s", self.time, sol.status)
        if self.debug_solver:
            self.solver_log.append({
                "step": k, "time": fmt(self.time), "tasks": stack.task_ids,
                "qd": [fmt(v) for v in sol.qd], "status": sol.status,
                "residuals": [[lvl, fmt(v)] for lvl, v in sol.residuals],
                "iterations": sol.iterations,
            })

        self.state = integrate_state(self.model, self.state, sol.qd,
                                     self.controllers.platform.twist, dt)
        self.state.gripper_aperture = self.controllers.gripper.aperture
        ee_T = ee_transform(self.model, self.state.q, self.state.base)
        self.world = update_attachment(self.world, ee_T, was_closed,
                                       self.controllers.gripper.aperture <= 0.0, self.sc.eps_grasp)
        self.step_index += 1
        self.world.time = self.time
        plat = self.controllers.platform
        self.trace.append(TraceRecord(
            time=self.time, base=self.state.base.copy(), base_twist=self.state.base_twist.copy(),
            q=self.state.q.copy(), ee=ee_T[:3, 3].copy(), cube=self.world.cube_position.copy(),
            attached=self.world.attached, active=self.registry.ids(),
            platform_target=plat.target, platform_moving=plat.moving,
            gripper=self.controllers.gripper.aperture, gate=self.gate,
            residuals=list(sol.residuals)))

    def run(self, duration: float) -> RunResult:
        steps = int(round(duration * self.schedule.sot_hz))
        outcome = TIMEOUT
        done_at = None
        for _ in range(steps):
            self.step()
            if self.root_status is not None and self.root_status.final:
                outcome = ROOT_SUCCESS if self.root_status is Status.SUCCESS else ROOT_FAILURE
                done_at = self.time
                break
        err = float(np.linalg.norm(self.world.cube_position[:2] - self.world.place_center))
        return RunResult(outcome, self.trace, self.tree.traces, self.bt_ticks, self.solves,
                         done_at, err, self.solver_log)


def run(scenario, duration: float, debug_solver: bool = False) -> RunResult:
    return Simulation(scenario, debug_solver=debug_solver).run(duration)


def dump_jsonl(items, fh) -> None:
    for item in items:
        fh.write(json.dumps(item, separators=(",", ":")) + "\n")


def trace_to_string(records, n: int) -> str:
    buf = io.StringIO()
    write_trace(records, n, buf)
    return buf.getvalue()
