"""A 15-joint rigid skeleton standing in for a parametric body mesh.

World coordinates coincide with the camera frame: x right, y down, z
forward (depth). At yaw 0 the body faces the camera, so its left side
projects to the right half of the image.

Rest skeleton (meters; offset of each joint from its parent, y down)::

    pelvis      root                 spine       pelvis + (0, -0.50, 0)
    head        spine + (0, -0.25, 0)
    l_shoulder  spine + (+0.18, 0, 0)   r_shoulder  spine + (-0.18, 0, 0)
    l_elbow     l_shoulder + (+0.06, 0.26, 0)
    l_wrist     l_elbow + (+0.04, 0.24, 0)
    l_hip       pelvis + (+0.10, 0, 0)  l_knee  l_hip + (0, 0.42, 0)
    l_ankle     l_knee + (0, 0.40, 0)

Right-side joints mirror the left ones in x. Every joint carries three
Euler angles applied in Z-X-Y order; a joint's rotation orients the bone
that arrives at it, and the pelvis rotation (after yaw) orients the whole
body.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

JOINTS: tuple[str, ...] = (
    "pelvis",
    "spine",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
)
JOINT_INDEX = {name: i for i, name in enumerate(JOINTS)}

PARENT: dict[str, str | None] = {
    "pelvis": None,
    "spine": "pelvis",
    "head": "spine",
    "l_shoulder": "spine",
    "l_elbow": "l_shoulder",
    "l_wrist": "l_elbow",
    "r_shoulder": "spine",
    "r_elbow": "r_shoulder",
    "r_wrist": "r_elbow",
    "l_hip": "pelvis",
    "l_knee": "l_hip",
    "l_ankle": "l_knee",
    "r_hip": "pelvis",
    "r_knee": "r_hip",
    "r_ankle": "r_knee",
}

REST_OFFSETS: dict[str, tuple[float, float, float]] = {
    "pelvis": (0.0, 0.0, 0.0),
    "spine": (0.0, -0.50, 0.0),
    "head": (0.0, -0.25, 0.0),
    "l_shoulder": (0.18, 0.0, 0.0),
    "l_elbow": (0.06, 0.26, 0.0),
    "l_wrist": (0.04, 0.24, 0.0),
    "r_shoulder": (-0.18, 0.0, 0.0),
    "r_elbow": (-0.06, 0.26, 0.0),
    "r_wrist": (-0.04, 0.24, 0.0),
    "l_hip": (0.10, 0.0, 0.0),
    "l_knee": (0.0, 0.42, 0.0),
    "l_ankle": (0.0, 0.40, 0.0),
    "r_hip": (-0.10, 0.0, 0.0),
    "r_knee": (0.0, 0.42, 0.0),
    "r_ankle": (0.0, 0.40, 0.0),
}

# (parent, child) pairs; order fixes raster overwrite order and palette index.
BONES: tuple[tuple[str, str], ...] = tuple((PARENT[j], j) for j in JOINTS if PARENT[j] is not None)

ARM_CHAINS = {
    "Left": ("l_shoulder", "l_elbow", "l_wrist"),
    "Right": ("r_shoulder", "r_elbow", "r_wrist"),
}
HEAD_GROUP = ("spine", "head")
LOWER_GROUP = ("pelvis", "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle")

_VISIBLE_EPS = 1e-6


class Grasp(str, enum.Enum):
    OPEN = "Open"
    SINGLE = "SingleGrasp"
    TWO_HAND = "TwoHandHold"


class Orientation(str, enum.Enum):
    FRONTAL = "Frontal"
    LEFT = "Left"
    RIGHT = "Right"
    BACK = "Back"


class JointNotVisible(ValueError):
    pass


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def euler_zxy(angles) -> np.ndarray:
    a, b, c = angles
    return _rz(a) @ _rx(b) @ _ry(c)


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about the vertical (y) axis."""
    return _ry(yaw)


@dataclass(frozen=True)
class BodyPose:
    root: np.ndarray  # (3,) meters
    yaw: float = 0.0
    shape_scale: float = 1.0
    joints: np.ndarray = field(default_factory=lambda: np.zeros((len(JOINTS), 3)))
    grasp: tuple[Grasp, Grasp] = (Grasp.OPEN, Grasp.OPEN)  # (left, right)

    def __post_init__(self):
        root = np.asarray(self.root, dtype=np.float64).reshape(3)
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape != (len(JOINTS), 3):
            raise ValueError(f"joints must be {len(JOINTS)}x3, got {joints.shape}")
        if not (0.5 < self.shape_scale < 2.0):
            raise ValueError(f"shape_scale must lie in (0.5, 2.0), got {self.shape_scale}")
        if not (np.isfinite(root).all() and np.isfinite(joints).all() and math.isfinite(self.yaw)):
            raise ValueError("pose values must be finite")
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "shape_scale", float(self.shape_scale))
        object.__setattr__(self, "grasp", tuple(Grasp(g) for g in self.grasp))

    def angle(self, name: str) -> np.ndarray:
        return self.joints[JOINT_INDEX[name]]

    def to_json(self) -> dict:
        return {
            "root": [float(v) for v in self.root],
            "yaw": self.yaw,
            "shape_scale": self.shape_scale,
            "joints": {n: [float(v) for v in self.joints[i]] for i, n in enumerate(JOINTS)},
            "grasp": {"left": self.grasp[0].value, "right": self.grasp[1].value},
        }

    @classmethod
    def from_json(cls, d: dict) -> "BodyPose":
        joints = np.zeros((len(JOINTS), 3))
        for name, vals in d.get("joints", {}).items():
            if name not in JOINT_INDEX:
                raise ValueError(f"unknown joint {name!r}")
            joints[JOINT_INDEX[name]] = vals
        g = d.get("grasp", {})
        return cls(
            root=np.asarray(d["root"], dtype=np.float64),
            yaw=float(d.get("yaw", 0.0)),
            shape_scale=float(d.get("shape_scale", 1.0)),
            joints=joints,
            grasp=(Grasp(g.get("left", "Open")), Grasp(g.get("right", "Open"))),
        )


@dataclass(frozen=True)
class Camera:
    focal: float
    principal: tuple[float, float]
    size: tuple[int, int]  # (w, h)

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal length must be positive")

    def project(self, p) -> tuple[np.ndarray, bool]:
        p = np.asarray(p, dtype=np.float64)
        if p[2] <= _VISIBLE_EPS:
            return np.array([np.nan, np.nan]), False
        return np.array([self.focal * p[0] / p[2] + self.principal[0], self.focal * p[1] / p[2] + self.principal[1]]), True

    def to_json(self) -> dict:
        return {"focal": self.focal, "principal": list(self.principal), "size": list(self.size)}

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        return cls(float(d["focal"]), tuple(float(v) for v in d["principal"]), tuple(int(v) for v in d["size"]))


@dataclass(frozen=True)
class Joints2D:
    xy: np.ndarray  # (15, 2)
    visible: np.ndarray  # (15,) bool

    def __getitem__(self, name: str) -> np.ndarray:
        return self.xy[JOINT_INDEX[name]]

    def is_visible(self, name: str) -> bool:
        return bool(self.visible[JOINT_INDEX[name]])


def joint_positions_3d(pose: BodyPose) -> np.ndarray:
    """World-space joint positions, shape (15, 3)."""
    rot: dict[str, np.ndarray] = {}
    pos: dict[str, np.ndarray] = {}
    s = pose.shape_scale
    for name in JOINTS:
        parent = PARENT[name]
        local = euler_zxy(pose.angle(name))
        if parent is None:
            rot[name] = yaw_matrix(pose.yaw) @ local
            pos[name] = pose.root.copy()
        else:
            rot[name] = rot[parent] @ local
            pos[name] = pos[parent] + rot[name] @ (s * np.asarray(REST_OFFSETS[name]))
    return np.array([pos[n] for n in JOINTS])


def forward_kinematics(pose: BodyPose, cam: Camera) -> Joints2D:
    p3 = joint_positions_3d(pose)
    xy = np.empty((len(JOINTS), 2))
    vis = np.empty(len(JOINTS), dtype=bool)
    for i, p in enumerate(p3):
        xy[i], vis[i] = cam.project(p)
    return Joints2D(xy, vis)


def orientation_class(pose: BodyPose) -> Orientation:
    yaw = math.remainder(pose.yaw, 2 * math.pi)  # [-pi, pi]
    q = math.pi / 4
    if abs(yaw) < q:
        return Orientation.FRONTAL
    if q <= yaw < 3 * q:
        return Orientation.RIGHT
    if -3 * q < yaw <= -q:
        return Orientation.LEFT
    return Orientation.BACK


@dataclass(frozen=True)
class Identity:
    """Placement and build of a person: root position, yaw and shape scale."""

    root: np.ndarray
    yaw: float = 0.0
    shape_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "root", np.asarray(self.root, dtype=np.float64).reshape(3))


def retarget(template_seq: list[BodyPose], target: Identity) -> list[BodyPose]:
    """Move a pose sequence onto a new identity.

    Joint angles and grasp states are kept. Root motion relative to the
    first frame is rotated by the yaw difference and re-anchored at the
    target root; yaw offsets relative to the first frame are kept.
    """
    if not template_seq:
        raise ValueError("cannot retarget an empty sequence")
    first = template_seq[0]
    dyaw = target.yaw - first.yaw
    rot = yaw_matrix(dyaw)
    anchor = target.root - rot @ first.root
    out = []
    for pose in template_seq:
        out.append(
            replace(
                pose,
                root=rot @ pose.root + anchor,
                yaw=pose.yaw + dyaw,
                shape_scale=target.shape_scale,
            )
        )
    return out


def hand_anchor(pose: BodyPose, side: str, cam: Camera) -> np.ndarray:
    """Palm-center proxy: projected wrist pushed half a forearm further along the forearm."""
    elbow, wrist = ARM_CHAINS[side][1], ARM_CHAINS[side][2]
    j = forward_kinematics(pose, cam)
    if not (j.is_visible(wrist) and j.is_visible(elbow)):
        raise JointNotVisible(f"{side} wrist or elbow is behind the camera")
    return j[wrist] + 0.5 * (j[wrist] - j[elbow])


def projected_forearm(pose: BodyPose, side: str, cam: Camera) -> float:
    elbow, wrist = ARM_CHAINS[side][1], ARM_CHAINS[side][2]
    j = forward_kinematics(pose, cam)
    if not (j.is_visible(wrist) and j.is_visible(elbow)):
        raise JointNotVisible(f"{side} wrist or elbow is behind the camera")
    return float(np.linalg.norm(j[wrist] - j[elbow]))


def rest_pose(root=(0.0, 0.0, 3.0), yaw: float = 0.0, shape_scale: float = 1.0) -> BodyPose:
    return BodyPose(root=np.asarray(root, dtype=np.float64), yaw=yaw, shape_scale=shape_scale)
