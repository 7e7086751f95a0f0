"""Guidance frames: colored skeleton + product box rasters, and the pose encoder.

A guidance frame is a [4, H, W] array: channels 0-2 hold the skeleton
colors, channel 3 the box occupancy. Pixel (row i, col j) is sampled at
its center ``(j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BONES, JOINT_INDEX, Camera, Joints2D, forward_kinematics
from .geometry import RotatedRect
from .numerics import tape as T
from .numerics.tape import Var

LINE_HALF_WIDTH = 1.5

# One color per bone, in BONES order.
PALETTE: tuple[tuple[float, float, float], ...] = (
    (1.00, 1.00, 1.00),  # pelvis-spine
    (1.00, 0.85, 0.60),  # spine-head
    (1.00, 0.00, 0.00),  # spine-l_shoulder
    (1.00, 0.50, 0.00),  # l_shoulder-l_elbow
    (1.00, 1.00, 0.00),  # l_elbow-l_wrist
    (0.00, 0.00, 1.00),  # spine-r_shoulder
    (0.00, 0.50, 1.00),  # r_shoulder-r_elbow
    (0.00, 1.00, 1.00),  # r_elbow-r_wrist
    (0.00, 1.00, 0.00),  # pelvis-l_hip
    (0.50, 1.00, 0.00),  # l_hip-l_knee
    (0.00, 0.50, 0.00),  # l_knee-l_ankle
    (1.00, 0.00, 1.00),  # pelvis-r_hip
    (0.60, 0.00, 1.00),  # r_hip-r_knee
    (0.50, 0.00, 0.50),  # r_knee-r_ankle
)


def _pixel_centers(size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    w, h = size
    return np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)


def segment_distance(px, py, a, b) -> np.ndarray:
    ab = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    denom = float(ab @ ab)
    dx, dy = px - a[0], py - a[1]
    if denom == 0.0:
        return np.hypot(dx, dy)
    t = np.clip((dx * ab[0] + dy * ab[1]) / denom, 0.0, 1.0)
    return np.hypot(dx - t * ab[0], dy - t * ab[1])


def rasterize_skeleton(joints: Joints2D, size: tuple[int, int], palette=PALETTE) -> np.ndarray:
    """Draw each bone as a 3 px wide segment; later bones overwrite earlier ones."""
    if len(palette) != len(BONES):
        raise ValueError(f"palette needs {len(BONES)} colors, got {len(palette)}")
    w, h = size
    out = np.zeros((3, h, w))
    px, py = _pixel_centers(size)
    for (pa, pb), color in zip(BONES, palette):
        ia, ib = JOINT_INDEX[pa], JOINT_INDEX[pb]
        if not (joints.visible[ia] and joints.visible[ib]):
            continue
        hit = segment_distance(px, py, joints.xy[ia], joints.xy[ib]) <= LINE_HALF_WIDTH
        out[:, hit] = np.asarray(color)[:, None]
    return out


def rasterize_box(rect: RotatedRect, size: tuple[int, int]) -> np.ndarray:
    px, py = _pixel_centers(size)
    pts = np.column_stack([px.ravel(), py.ravel()])
    inside = rect.contains(pts).reshape(py.shape)
    return inside.astype(np.float64)[None]


def guidance_frame(joints: Joints2D, rect: RotatedRect | None, size: tuple[int, int]) -> np.ndarray:
    skel = rasterize_skeleton(joints, size)
    box = rasterize_box(rect, size) if rect is not None else np.zeros((1, size[1], size[0]))
    return np.concatenate([skel, box], axis=0)


def render_plan(plan, cam: Camera) -> np.ndarray:
    """Rasterize every frame of a guidance plan: [T, 4, H, W]."""
    return np.stack(
        [guidance_frame(forward_kinematics(p, cam), b, cam.size) for p, b in zip(plan.poses, plan.boxes)]
    )


def frame_to_ppm(frame: np.ndarray) -> bytes:
    """Preview image: skeleton colors, with the box shown in mid gray underneath."""
    rgb = frame[:3].copy()
    under = rgb.max(axis=0) == 0
    rgb[:, under] = 0.5 * frame[3][under]
    return rgb_to_ppm(rgb)


def rgb_to_ppm(rgb: np.ndarray) -> bytes:
    """[3, H, W] floats in [0, 1] to binary PPM (P6)."""
    _, h, w = rgb.shape
    px = np.clip(np.rint(np.clip(rgb, 0.0, 1.0) * 255), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode() + px.transpose(1, 2, 0).tobytes()


# -- pose encoder --------------------------------------------------------------

@dataclass
class PoseEncoderWeights:
    """Two 3x3 stride-2 convolutions, 4 -> 8 -> 16 channels."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, seed: int = 0, sigma: float = 0.05) -> "PoseEncoderWeights":
        rng = np.random.default_rng(seed)
        return cls(
            w1=sigma * rng.standard_normal((8, 4, 3, 3)),
            b1=np.zeros(8),
            w2=sigma * rng.standard_normal((16, 8, 3, 3)),
            b2=np.zeros(16),
        )

    def named(self) -> dict:
        return {"pose.w1": self.w1, "pose.b1": self.b1, "pose.w2": self.w2, "pose.b2": self.b2}


def pose_encode(frames, weights: PoseEncoderWeights):
    """[T, 4, H, W] guidance -> [T, 16, H/4, W/4] features.

    Returns a plain array unless the frames or any weight is a tape ``Var``.
    """
    shape = frames.shape
    if len(shape) != 4 or shape[1] != 4:
        raise ValueError(f"expected [T, 4, H, W] guidance, got {shape}")
    if shape[2] % 4 or shape[3] % 4:
        raise ValueError(f"guidance height and width must be divisible by 4, got {shape[2:]}")
    h = T.relu(T.conv2d(frames, weights.w1, weights.b1, stride=2, pad=1))
    out = T.conv2d(h, weights.w2, weights.b2, stride=2, pad=1)
    taped = isinstance(frames, Var) or any(isinstance(v, Var) for v in (weights.w1, weights.b1, weights.w2, weights.b2))
    return out if taped else out.value


def concat_with_noise(noise, pose_feat):
    """Channel concatenation, noise channels first."""
    ns, ps = noise.shape, pose_feat.shape
    if len(ns) != 4 or len(ps) != 4 or ns[0] != ps[0] or ns[2:] != ps[2:]:
        raise ValueError(f"cannot concatenate noise {ns} with pose features {ps}")
    if isinstance(noise, Var) or isinstance(pose_feat, Var):
        return T.concat([noise, pose_feat], axis=1)
    return np.concatenate([noise, pose_feat], axis=1)
