"""Scenario configuration: file loading, catalogs and load-time checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from .bt.core import BTNode
from .bt.dsl import Catalogs, ParseDiagnostic, parse_with_diagnostics, validate
from .controllers import gripper_action, platform_goto_action
from .errors import ConfigurationError
from .robot import RobotModel
from .sim import Schedule, Table, WorldState, make_condition
from .tasks import (EQUALITY, ee_orientation_task, ee_position_task, joint_limit_task,
                    posture_task)

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_SCENARIO = DATA_DIR / "scenario.yaml"
MAX_GAIN_DT = 0.5


def _target_fn(spec: dict, tid: str):
    if "position" in spec:
        return np.asarray(spec["position"], dtype=float)
    frame = spec.get("frame", "world")
    offset = np.asarray(spec.get("offset", (0.0, 0.0, 0.0)), dtype=float)
    if frame == "cube":
        return lambda world: world.cube_position + offset
    if frame == "place":
        return lambda world: world.place_point + offset
    raise ConfigurationError(f"task {tid}: unknown target frame {frame!r}")


def build_task(tid: str, spec: dict, model: RobotModel):
    kind = spec.get("type")
    common = {"task_id": tid, "level": int(spec.get("level", 1))}
    for key in ("gain", "tolerance", "timeout", "max_rate"):
        if key in spec:
            common[key] = float(spec[key])
    if kind == "ee_position":
        return ee_position_task(_target_fn(spec.get("target", {}), tid), **common)
    if kind != "ee_position" and "max_rate" in common:
        raise ConfigurationError(f"task {tid}: max_rate is only supported for ee_position")
    if kind == "ee_orientation":
        R = Rotation.from_euler("xyz", spec.get("rpy", (0.0, 0.0, 0.0))).as_matrix()
        return ee_orientation_task(R, **common)
    if kind == "posture":
        return posture_task(spec["q_ref"], **common)
    if kind == "joint_limits":
        common.pop("gain", None)
        common.pop("tolerance", None)
        return joint_limit_task(model.q_min, model.q_max, float(spec.get("margin", 0.15)),
                                float(spec.get("horizon", 0.2)), **common)
    raise ConfigurationError(f"task {tid}: unknown type {kind!r}")


def build_action(cid: str, spec: dict):
    controller, verb = spec.get("controller"), spec.get("verb")
    if controller == "platform" and verb == "goto":
        return platform_goto_action(spec["waypoint"])
    if controller == "gripper":
        return gripper_action(verb)
    raise ConfigurationError(f"command {cid}: unsupported {controller}/{verb}")


@dataclass
class Scenario:
    model: RobotModel
    tree: BTNode
    tree_source: str
    schedule: Schedule
    tasks: dict
    background: list
    conditions: dict
    actions: dict
    gate: Optional[object]
    waypoints: dict
    table: Table
    cube_start: np.ndarray
    place_center: np.ndarray
    place_radius: float
    base_start: np.ndarray
    q_start: np.ndarray
    platform_speed: float = 0.15
    goal_radius: float = 0.02
    gripper_travel: float = 0.5
    gripper_start: float = 1.0
    eps_grasp: float = 0.010
    damping: float = 1e-4
    regularization: float = 1e-6
    raw: dict = field(default_factory=dict)

    def make_world(self) -> WorldState:
        cube = np.eye(4)
        cube[:3, 3] = self.cube_start
        return WorldState(self.table, cube, self.place_center, self.place_radius,
                          dict(self.waypoints))

    def catalogs(self) -> Catalogs:
        return Catalogs(self.conditions, self.actions, self.tasks)

    def sot_task_ids(self) -> set:
        return {n.ref for n in self.tree.walk() if n.kind == "sot_action"}


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc.strerror}") from exc


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    data = yaml.safe_load(_read(path))
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: scenario must be a mapping")
    return data, path.parent


def build_scenario(data: dict, base_dir: Path, tree_text: Optional[str] = None,
                   bt_hz: Optional[int] = None, sot_hz: Optional[int] = None) -> Scenario:
    """Assemble and check a scenario; raises ConfigurationError on any problem.

    A tree whose parse or validation fails raises
    :class:`ScenarioTreeError` carrying the diagnostics.
    """
    try:
        model = RobotModel.load(base_dir / data["robot"])
        if tree_text is None:
            tree_text = _read(base_dir / data["tree"])
        sched = dict(data.get("schedule", {}))
        if bt_hz is not None:
            sched["bt_hz"] = bt_hz
        if sot_hz is not None:
            sched["sot_hz"] = sot_hz
        schedule = Schedule(int(sched.get("bt_hz", 10)), int(sched.get("sot_hz", 200)),
                            {"platform": int(sched.get("platform_hz", 100)),
                             "gripper": int(sched.get("gripper_hz", 100))})
        tasks = {tid: build_task(tid, spec, model) for tid, spec in data.get("tasks", {}).items()}
        background = list(data.get("background_tasks", []))
        for tid in background:
            if tid not in tasks:
                raise ConfigurationError(f"background task {tid!r} is not in the catalog")
        conditions = {cid: make_condition(spec) for cid, spec in data.get("conditions", {}).items()}
        actions = {cid: build_action(cid, spec) for cid, spec in data.get("commands", {}).items()}
        waypoints = {k: np.asarray(v, dtype=float) for k, v in data["waypoints"].items()}
        for cid, spec in data.get("commands", {}).items():
            if spec.get("verb") == "goto" and spec.get("waypoint") not in waypoints:
                raise ConfigurationError(f"command {cid}: unknown waypoint {spec.get('waypoint')!r}")
        t = data["table"]
        table = Table(tuple(t["center"]), tuple(t["size"]), float(t["height"]))
        plat = data.get("platform", {})
        grip = data.get("gripper", {})
        solver = data.get("solver", {})
        start = data["start"]
        base_start = np.asarray(start.get("base", [*waypoints[start.get("waypoint", "A")], 0.0]),
                                dtype=float)
        gate_id = data.get("gate_condition")
        if gate_id is not None and gate_id not in conditions:
            raise ConfigurationError(f"gate condition {gate_id!r} is not in the catalog")
        sc = Scenario(
            model=model, tree=None, tree_source=tree_text, schedule=schedule, tasks=tasks,
            background=background, conditions=conditions, actions=actions,
            gate=conditions.get(gate_id) if gate_id else None,
            waypoints=waypoints, table=table,
            cube_start=np.asarray(data["cube"]["position"], dtype=float),
            place_center=np.asarray(data["place_target"]["center"], dtype=float),
            place_radius=float(data["place_target"].get("radius", 0.025)),
            base_start=base_start, q_start=np.asarray(start["q"], dtype=float),
            platform_speed=float(plat.get("speed", 0.15)),
            goal_radius=float(plat.get("goal_radius", 0.02)),
            gripper_travel=float(grip.get("travel_time", 0.5)),
            gripper_start=float(grip.get("aperture", 1.0)),
            eps_grasp=float(data.get("grasp", {}).get("epsilon", 0.010)),
            damping=float(solver.get("damping", 1e-4)),
            regularization=float(solver.get("regularization", 1e-6)),
            raw=data,
        )
    except KeyError as exc:
        raise ConfigurationError(f"scenario is missing key {exc.args[0]!r}") from None
    if sc.q_start.shape != (model.n,):
        raise ConfigurationError(f"start q must have {model.n} entries")
    if np.any(sc.q_start < model.q_min) or np.any(sc.q_start > model.q_max):
        raise ConfigurationError("start q violates joint bounds")
    dt = schedule.dt
    for task in tasks.values():
        if task.kind == EQUALITY and task.gain * dt >= MAX_GAIN_DT:
            raise ConfigurationError(
                f"task {task.id}: gain*dt = {task.gain * dt:.3g} must stay below {MAX_GAIN_DT}")

    root, diags = parse_with_diagnostics(tree_text)
    if root is None:
        raise ScenarioTreeError(diags)
    diags = validate(root, sc.catalogs())
    if diags:
        raise ScenarioTreeError(diags)
    sc.tree = root
    return sc


class ScenarioTreeError(ConfigurationError):
    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


def load_scenario(path=DEFAULT_SCENARIO, tree_path=None, bt_hz=None, sot_hz=None) -> Scenario:
    data, base_dir = load_config(path)
    tree_text = _read(Path(tree_path)) if tree_path is not None else None
    return build_scenario(data, base_dir, tree_text, bt_hz=bt_hz, sot_hz=sot_hz)

