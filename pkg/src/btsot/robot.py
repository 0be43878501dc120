"""Kinematics of a planar mobile base carrying a serial revolute arm.

The arm is described with standard Denavit-Hartenberg rows ``(a, alpha, d,
theta_offset)``; joint ``i`` rotates about the z axis of frame ``i-1``.  The
base is an unconstrained planar rigid body ``(x, y, theta)`` driven by a
world-frame twist.  Only arm joints enter the Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, EvaluationError

RIGID_TOL = 1e-12


def wrap_angle(a):
    """Map angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def dh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def planar_transform(base_pose) -> np.ndarray:
    """Homogeneous transform of the base frame for a pose ``(x, y, theta)``."""
    x, y, th = base_pose
    c, s = np.cos(th), np.sin(th)
    T = np.eye(4)
    T[:2, :2] = [[c, -s], [s, c]]
    T[0, 3] = x
    T[1, 3] = y
    return T


def make_transform(xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = Rotation.from_euler("xyz", rpy).as_matrix()
    T[:3, 3] = xyz
    return T


def _check_rigid(T: np.ndarray, name: str) -> None:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        raise ConfigurationError(f"{name}: expected a 4x4 transform, got {T.shape}")
    R = T[:3, :3]
    if np.max(np.abs(R.T @ R - np.eye(3))) > RIGID_TOL or np.linalg.det(R) < 0:
        raise ConfigurationError(f"{name}: rotation part is not orthonormal")
    if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0]):
        raise ConfigurationError(f"{name}: last row must be [0, 0, 0, 1]")


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    quaternion: np.ndarray  # scalar-last (x, y, z, w)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        q = Rotation.from_matrix(T[:3, :3]).as_quat()
        return cls(T[:3, 3].copy(), q / np.linalg.norm(q))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = Rotation.from_quat(self.quaternion).as_matrix()
        T[:3, 3] = self.position
        return T


@dataclass(frozen=True)
class RobotModel:
    """Immutable kinematic description.

    Attributes:
        dh: ``(n, 4)`` array of rows ``(a, alpha, d, theta_offset)``.
        mount: base frame -> arm root transform.
        tool: last link -> end-effector transform.
        q_min, q_max: joint position bounds (rad).
        v_max: joint velocity limits (rad/s).
    """

    dh: np.ndarray
    mount: np.ndarray
    tool: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    v_max: np.ndarray
    name: str = "generic-7dof"

    def __post_init__(self):
        dh = np.atleast_2d(np.asarray(self.dh, dtype=float))
        if dh.ndim != 2 or dh.shape[1] != 4 or dh.shape[0] < 1:
            raise ConfigurationError("dh table must have shape (n, 4) with n >= 1")
        n = dh.shape[0]
        arrays = {}
        for key in ("q_min", "q_max", "v_max"):
            v = np.asarray(getattr(self, key), dtype=float).reshape(-1)
            if v.shape != (n,):
                raise ConfigurationError(f"{key} must have {n} entries")
            arrays[key] = v
        if np.any(arrays["q_min"] >= arrays["q_max"]):
            raise ConfigurationError("joint bounds must satisfy q_min < q_max")
        if np.any(arrays["v_max"] <= 0):
            raise ConfigurationError("velocity limits must be positive")
        _check_rigid(self.mount, "mount")
        _check_rigid(self.tool, "tool")
        object.__setattr__(self, "dh", dh)
        object.__setattr__(self, "mount", np.asarray(self.mount, dtype=float))
        object.__setattr__(self, "tool", np.asarray(self.tool, dtype=float))
        for key, v in arrays.items():
            object.__setattr__(self, key, v)

    @property
    def n(self) -> int:
        return self.dh.shape[0]

    @classmethod
    def from_dict(cls, data: dict) -> "RobotModel":
        try:
            rows = data["dh"]
            dh = [[r["a"], r["alpha"], r["d"], r.get("theta_offset", 0.0)] for r in rows]
            mount = make_transform(data.get("mount", {}).get("xyz", (0, 0, 0)),
                                   data.get("mount", {}).get("rpy", (0, 0, 0)))
            tool = make_transform(data.get("tool", {}).get("xyz", (0, 0, 0)),
                                  data.get("tool", {}).get("rpy", (0, 0, 0)))
            return cls(dh=np.array(dh), mount=mount, tool=tool,
                       q_min=data["q_min"], q_max=data["q_max"],
                       v_max=data["v_max"], name=data.get("name", "robot"))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed robot description: {exc!r}") from exc

    @classmethod
    def load(cls, path) -> "RobotModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))


@dataclass
class RobotState:
    q: np.ndarray
    qd: np.ndarray = None
    base: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_twist: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gripper_aperture: float = 1.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        self.qd = np.zeros_like(self.q) if self.qd is None else np.asarray(self.qd, dtype=float).copy()
        self.base = np.asarray(self.base, dtype=float).copy()
        self.base_twist = np.asarray(self.base_twist, dtype=float).copy()

    @property
    def gripper(self) -> str:
        return "closed" if self.gripper_aperture <= 0.0 else "open"

    def copy(self) -> "RobotState":
        return replace(self)


def link_frames(model: RobotModel, q, base_pose) -> list[np.ndarray]:
    """World transforms of frames 0..n, with frame 0 the arm root."""
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise ValueError(f"expected {model.n} joint values, got shape {q.shape}")
    T = planar_transform(base_pose) @ model.mount
    frames = [T]
    for (a, alpha, d, off), qi in zip(model.dh, q):
        T = T @ dh_transform(a, alpha, d, qi + off)
        frames.append(T)
    return frames


def ee_transform(model: RobotModel, q, base_pose) -> np.ndarray:
    return link_frames(model, q, base_pose)[-1] @ model.tool


def forward_kinematics(model: RobotModel, q, base_pose) -> Pose:
    """World-frame end-effector pose."""
    return Pose.from_matrix(ee_transform(model, q, base_pose))


def geometric_jacobian(model: RobotModel, q, base_pose) -> np.ndarray:
    """6 x n world-frame Jacobian, rows (linear; angular), arm joints only."""
    frames = link_frames(model, q, base_pose)
    p_ee = (frames[-1] @ model.tool)[:3, 3]
    J = np.zeros((6, model.n))
    for i in range(model.n):
        z = frames[i][:3, 2]
        p = frames[i][:3, 3]
        J[:3, i] = np.cross(z, p_ee - p)
        J[3:, i] = z
    return J


def integrate_state(model: RobotModel, state: RobotState, qd, base_twist, dt: float) -> RobotState:
    """One explicit Euler step; joints clamped to bounds, base twist in world frame."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    qd = np.asarray(qd, dtype=float)
    base_twist = np.asarray(base_twist, dtype=float)
    if not (np.all(np.isfinite(qd)) and np.all(np.isfinite(base_twist))):
        raise EvaluationError("non-finite velocity command")
    q = np.clip(state.q + qd * dt, model.q_min, model.q_max)
    base = state.base + base_twist * dt
    base[2] = wrap_angle(base[2])
    return RobotState(q=q, qd=qd, base=base, base_twist=base_twist,
                      gripper_aperture=state.gripper_aperture)


def load_default_model() -> RobotModel:
    return RobotModel.load(Path(__file__).parent / "data" / "robot.yaml")
