"""Auxiliary low-level controllers commanded by standard BT action nodes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bt.core import Status
from .errors import ConfigurationError

PLATFORM = "platform"
GRIPPER = "gripper"
VERBS = {PLATFORM: ("goto", "stop"), GRIPPER: ("open", "close")}


@dataclass(frozen=True)
class ControllerCommand:
    controller: str
    verb: str
    arg: Optional[str] = None
    tick: int = 0

    def check(self, registered) -> None:
        if self.controller not in registered:
            raise ConfigurationError(f"unknown controller {self.controller!r}")
        if self.verb not in VERBS.get(self.controller, ()):
            raise ConfigurationError(f"verb {self.verb!r} is not valid for {self.controller!r}")
        if self.verb == "goto" and not self.arg:
            raise ConfigurationError("goto needs a waypoint id")


@dataclass
class PlatformController:
    """Straight-line waypoint follower at constant planar speed.

    While a target is active and farther than ``goal_radius`` the commanded
    twist is ``speed * unit(target - position)`` with zero yaw rate.
    """

    waypoints: dict
    speed: float = 0.15
    goal_radius: float = 0.02
    target: Optional[str] = None
    reached: bool = False
    last_reached: Optional[str] = None
    twist: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.speed <= 0 or self.goal_radius <= 0:
            raise ConfigurationError("platform speed and goal radius must be positive")
        self.waypoints = {k: np.asarray(v, dtype=float)[:2] for k, v in self.waypoints.items()}

    def accept(self, cmd: ControllerCommand) -> None:
        if cmd.verb == "stop":
            self.target, self.reached = None, False
            return
        if cmd.arg not in self.waypoints:
            raise ConfigurationError(f"unknown waypoint {cmd.arg!r}")
        if cmd.arg != self.target:
            self.target, self.reached = cmd.arg, False

    def at(self, waypoint: str, base_pose) -> bool:
        if waypoint not in self.waypoints:
            raise ConfigurationError(f"unknown waypoint {waypoint!r}")
        d = self.waypoints[waypoint] - np.asarray(base_pose, dtype=float)[:2]
        return bool(np.hypot(d[0], d[1]) <= self.goal_radius)

    def step(self, base_pose) -> tuple[np.ndarray, bool]:
        twist, done = platform_step(self.target, base_pose, self.waypoints, self.speed,
                                    self.goal_radius)
        if done and self.target is not None and not self.reached:
            self.last_reached = self.target
        self.reached = done and self.target is not None
        self.twist = twist
        return twist, done

    @property
    def moving(self) -> bool:
        return self.target is not None and not self.reached


def platform_step(target, base_pose, waypoints, speed, goal_radius) -> tuple[np.ndarray, bool]:
    """Twist ``(vx, vy, omega)`` toward ``target`` and whether it is reached."""
    if target is None:
        return np.zeros(3), False
    if target not in waypoints:
        raise ConfigurationError(f"unknown waypoint {target!r}")
    d = np.asarray(waypoints[target], dtype=float)[:2] - np.asarray(base_pose, dtype=float)[:2]
    dist = np.hypot(d[0], d[1])
    if dist <= goal_radius:
        return np.zeros(3), True
    return np.array([speed * d[0] / dist, speed * d[1] / dist, 0.0]), False


@dataclass
class GripperController:
    """Aperture in [0, 1] (0 = closed) moving at ``1 / travel_time`` per second."""

    travel_time: float = 0.5
    aperture: float = 1.0
    goal: Optional[str] = None  # "open" | "close"

    def __post_init__(self):
        if self.travel_time <= 0:
            raise ConfigurationError("gripper travel time must be positive")

    def accept(self, cmd: ControllerCommand) -> None:
        self.goal = cmd.verb

    def step(self, dt: float) -> tuple[float, bool]:
        self.aperture, done = gripper_step(self.aperture, self.goal, dt, self.travel_time)
        return self.aperture, done

    def done(self, verb: str) -> bool:
        return self.aperture == (1.0 if verb == "open" else 0.0)


def gripper_step(aperture: float, command: Optional[str], dt: float,
                 travel_time: float = 0.5) -> tuple[float, bool]:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if command is None:
        return aperture, True
    goal = 1.0 if command == "open" else 0.0
    rate = dt / travel_time
    if abs(goal - aperture) <= rate * (1.0 + 1e-9):
        return goal, True
    new = aperture + rate if goal > aperture else aperture - rate
    return float(min(1.0, max(0.0, new))), False


class ControllerRegistry:
    """Named controllers and their latched commands."""

    def __init__(self, platform: PlatformController, gripper: GripperController):
        self.platform = platform
        self.gripper = gripper
        self.by_id = {PLATFORM: platform, GRIPPER: gripper}

    def dispatch(self, commands) -> dict:
        """Last writer wins per controller; controllers keep commands until replaced."""
        latest = {}
        for cmd in commands:
            cmd.check(self.by_id)
            latest[cmd.controller] = cmd
        for cid, cmd in latest.items():
            self.by_id[cid].accept(cmd)
        return latest


def dispatch(commands, registry: ControllerRegistry) -> dict:
    return registry.dispatch(commands)


# -- standard action nodes ------------------------------------------------------------

def platform_goto_action(waypoint: str):
    """``Move to <waypoint>`` for a reactive tree.

    A fresh activation fails when the platform's last completed goal already
    is ``waypoint`` (so a fallback falls through to the next leg); otherwise
    it commands the goto and reports Success once inside the goal radius.
    """

    def action(ctx, activated: bool) -> Status:
        plat = ctx.controllers.platform
        if waypoint not in plat.waypoints:
            raise ConfigurationError(f"unknown waypoint {waypoint!r}")
        if activated:
            if plat.last_reached == waypoint:
                return Status.FAILURE
            ctx.commands.append(ControllerCommand(PLATFORM, "goto", waypoint, ctx.tick))
        return Status.SUCCESS if plat.at(waypoint, ctx.state.base) else Status.RUNNING

    return action


def gripper_action(verb: str):
    if verb not in VERBS[GRIPPER]:
        raise ConfigurationError(f"unknown gripper verb {verb!r}")

    def action(ctx, activated: bool) -> Status:
        if activated:
            ctx.commands.append(ControllerCommand(GRIPPER, verb, None, ctx.tick))
        return Status.SUCCESS if ctx.controllers.gripper.done(verb) else Status.RUNNING

    return action
