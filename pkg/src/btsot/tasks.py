"""Prioritized velocity-level tasks, the active-task registry and the stack.

A task regulates an error ``e`` to zero.  Equality tasks linearize to
``J qd = -gain * e``; inequality tasks hand back rows ``A qd <= b`` directly.
Error convention: ``e = current - target``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, EvaluationError, InvariantViolation
from .robot import ee_transform, geometric_jacobian

log = logging.getLogger(__name__)

EQUALITY = "equality"
INEQUALITY = "inequality"

# Tuning defaults; the scenario file overrides them.
DEFAULT_GAIN = 2.0
DEFAULT_EE_TOLERANCE = 0.005
DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class TaskConstraint:
    A: np.ndarray
    b: np.ndarray
    relation: str  # "=" or "<="
    level: int
    task_id: str = ""

    @property
    def rows(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class Stack:
    """Levels sorted by ascending priority number (1 = highest)."""

    levels: tuple = ()

    def __post_init__(self):
        prios = [lvl for lvl, _ in self.levels]
        if any(a >= b for a, b in zip(prios, prios[1:])):
            raise InvariantViolation("stack levels must be strictly ascending")
        for lvl, cons in self.levels:
            if any(c.level != lvl for c in cons):
                raise InvariantViolation(f"constraint filed under the wrong level {lvl}")

    def __len__(self):
        return len(self.levels)

    @property
    def task_ids(self) -> list[str]:
        return [c.task_id for _, cons in self.levels for c in cons]


@dataclass
class Task:
    """One prioritized task.

    ``evaluator(model, state, world)`` returns ``(e, J)`` for equality tasks
    and ``(A, b)`` rows for inequality tasks.
    """

    id: str
    level: int
    kind: str
    dim: int
    evaluator: Callable
    gain: float = DEFAULT_GAIN
    tolerance: float = DEFAULT_EE_TOLERANCE
    timeout: float = DEFAULT_TIMEOUT
    max_rate: Optional[float] = None  # cap on ||gain * e|| for equality tasks

    def __post_init__(self):
        if self.max_rate is not None and self.max_rate <= 0:
            raise ConfigurationError(f"task {self.id}: max_rate must be > 0")
        if self.kind not in (EQUALITY, INEQUALITY):
            raise ConfigurationError(f"task {self.id}: unknown kind {self.kind!r}")
        if self.level < 1:
            raise ConfigurationError(f"task {self.id}: priority level must be >= 1")
        if self.gain <= 0 or self.tolerance <= 0:
            raise ConfigurationError(f"task {self.id}: gain and tolerance must be > 0")

    def evaluate(self, model, state, world=None):
        first, second = self.evaluator(model, state, world)
        first = np.asarray(first, dtype=float)
        second = np.asarray(second, dtype=float)
        if not (np.all(np.isfinite(first)) and np.all(np.isfinite(second))):
            raise EvaluationError(f"task {self.id}: non-finite evaluation")
        return first, second

    def error_norm(self, model, state, world=None) -> float:
        """Distance from convergence in task units.

        For inequality tasks this is the amount by which the rows are
        violated at zero velocity, i.e. how far the state is outside the
        admissible set.
        """
        a, b = self.evaluate(model, state, world)
        if self.kind == EQUALITY:
            return float(np.linalg.norm(a))
        return float(np.linalg.norm(np.maximum(-b, 0.0)))

    def converged(self, model, state, world=None) -> bool:
        return self.error_norm(model, state, world) <= self.tolerance


def linearize(task: Task, model, state, world=None) -> TaskConstraint:
    first, second = task.evaluate(model, state, world)
    n = model.n
    if task.kind == EQUALITY:
        e, J = first.reshape(-1), np.atleast_2d(second)
        if J.shape != (e.size, n):
            raise EvaluationError(f"task {task.id}: J has shape {J.shape}, expected {(e.size, n)}")
        v = -task.gain * e
        if task.max_rate is not None:
            norm = np.linalg.norm(v)
            if norm > task.max_rate:
                v = v * (task.max_rate / norm)
        return TaskConstraint(J, v, "=", task.level, task.id)
    A, b = first.reshape(-1, n), second.reshape(-1)
    if A.shape[0] != b.size:
        raise EvaluationError(f"task {task.id}: {A.shape[0]} rows but {b.size} bounds")
    return TaskConstraint(A, b, "<=", task.level, task.id)


@dataclass
class ActiveTaskRegistry:
    """Tasks currently configured by the behavior tree.

    Every successful add or remove bumps ``revision``.  A task id may be
    re-registered only by the node that owns it (a refresh).
    """

    active: dict = field(default_factory=dict)
    owners: dict = field(default_factory=dict)
    revision: int = 0

    def add(self, task: Task, owner: Optional[str] = None) -> None:
        if task.id in self.active:
            prev = self.owners.get(task.id)
            if owner is None or prev != owner:
                raise InvariantViolation(
                    f"task {task.id!r} already registered by {prev!r}, cannot add for {owner!r}")
        self.active[task.id] = task
        self.owners[task.id] = owner
        self.revision += 1

    def remove(self, task_id: str) -> bool:
        if task_id not in self.active:
            log.warning("removal of inactive task %r ignored", task_id)
            return False
        del self.active[task_id]
        del self.owners[task_id]
        self.revision += 1
        return True

    def __contains__(self, task_id) -> bool:
        return task_id in self.active

    def __len__(self) -> int:
        return len(self.active)

    def ids(self) -> tuple:
        return tuple(sorted(self.active))


def build_stack(registry: ActiveTaskRegistry, model, state, world=None) -> Stack:
    buckets = defaultdict(list)
    for tid in sorted(registry.active):
        task = registry.active[tid]
        buckets[task.level].append(linearize(task, model, state, world))
    return Stack(tuple((lvl, buckets[lvl]) for lvl in sorted(buckets)))


# -- rotation helpers ---------------------------------------------------------

def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def so3_left_jacobian_inv(phi) -> np.ndarray:
    """Inverse left Jacobian of SO(3): d log(R)/dt = Jl^-1 omega for Rdot = [omega] R."""
    phi = np.asarray(phi, dtype=float)
    th = np.linalg.norm(phi)
    K = _skew(phi)
    if th < 1e-6:
        return np.eye(3) - 0.5 * K + K @ K / 12.0
    coef = 1.0 / th**2 - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th))
    return np.eye(3) - 0.5 * K + coef * K @ K


# -- task factories -----------------------------------------------------------

def _resolve(target, world):
    return np.asarray(target(world) if callable(target) else target, dtype=float)


def ee_position_task(target, task_id="ee-position", level=2, gain=DEFAULT_GAIN,
                     tolerance=DEFAULT_EE_TOLERANCE, timeout=DEFAULT_TIMEOUT,
                     max_rate=None) -> Task:
    """World-frame end-effector position task.

    ``target`` is a 3-vector or a callable ``world -> 3-vector`` evaluated at
    every linearization, so world-referenced goals follow the world.  The base
    pose is read from the state and treated as a measured disturbance.
    """
    if not callable(target) and not np.all(np.isfinite(np.asarray(target, dtype=float))):
        raise ConfigurationError(f"task {task_id}: target must be finite")

    def evaluate(model, state, world):
        p = ee_transform(model, state.q, state.base)[:3, 3]
        J = geometric_jacobian(model, state.q, state.base)[:3]
        return p - _resolve(target, world), J

    return Task(task_id, level, EQUALITY, 3, evaluate, gain, tolerance, timeout, max_rate)


def ee_orientation_task(target_rotation, task_id="ee-orientation", level=3,
                        gain=DEFAULT_GAIN, tolerance=0.02, timeout=DEFAULT_TIMEOUT) -> Task:
    """Hold a world-frame tool orientation; error is log(R R_target^T)."""
    R_t = np.asarray(target_rotation, dtype=float)

    def evaluate(model, state, world):
        R = ee_transform(model, state.q, state.base)[:3, :3]
        e = Rotation.from_matrix(R @ R_t.T).as_rotvec()
        Jw = geometric_jacobian(model, state.q, state.base)[3:]
        return e, so3_left_jacobian_inv(e) @ Jw

    return Task(task_id, level, EQUALITY, 3, evaluate, gain, tolerance, timeout)


def posture_task(q_ref, task_id="posture", level=99, gain=DEFAULT_GAIN,
                 tolerance=0.01, timeout=DEFAULT_TIMEOUT) -> Task:
    q_ref = np.asarray(q_ref, dtype=float)

    def evaluate(model, state, world):
        return state.q - q_ref, np.eye(model.n)

    return Task(task_id, level, EQUALITY, q_ref.size, evaluate, gain, tolerance, timeout)


def joint_limit_task(q_min, q_max, margin, horizon, task_id="joint-limits", level=1,
                     timeout=DEFAULT_TIMEOUT) -> Task:
    """Velocity damper: qd_i <= (q_max - q_i)/h once q_i is within ``margin`` of a bound."""
    q_min = np.asarray(q_min, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    if np.any(q_min >= q_max) or margin <= 0 or horizon <= 0:
        raise ConfigurationError(f"task {task_id}: invalid bounds, margin or horizon")
    n = q_min.size

    def evaluate(model, state, world):
        q = state.q
        rows, rhs = [], []
        for i in range(n):
            if q[i] >= q_max[i] - margin:
                rows.append(np.eye(n)[i])
                rhs.append((q_max[i] - q[i]) / horizon)
            if q[i] <= q_min[i] + margin:
                rows.append(-np.eye(n)[i])
                rhs.append((q[i] - q_min[i]) / horizon)
        return np.array(rows, dtype=float).reshape(-1, n), np.array(rhs, dtype=float)

    return Task(task_id, level, INEQUALITY, 2 * n, evaluate, gain=1.0 / horizon,
                tolerance=1e-9, timeout=timeout)
