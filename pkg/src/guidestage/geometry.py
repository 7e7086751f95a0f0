"""Rotated product boxes: hulls, minimum-area rectangles, resizing and overlap.

Coordinates are image pixels with y pointing down. A mask pixel at row i,
column j is represented by its center ``(j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class EmptyOrDegenerate(ValueError):
    """Raised when a mask has fewer than three non-collinear pixel centers."""


class ExpandDir(str, enum.Enum):
    UP = "Up"
    LEFT_RIGHT = "LeftRight"
    FREE = "Free"


def _wrap_half_turn(angle: float) -> float:
    """Map an angle to [-pi/2, pi/2) modulo pi (a rectangle is symmetric under a half turn)."""
    a = math.fmod(angle + math.pi / 2, math.pi)
    if a < 0:
        a += math.pi
    a -= math.pi / 2
    if a >= math.pi / 2:
        a -= math.pi
    return a


@dataclass(frozen=True)
class RotatedRect:
    """Oriented rectangle.

    ``width`` is measured along the direction ``angle`` (radians, counted
    from the +x image axis towards +y), ``height`` along the perpendicular.
    The angle is stored modulo a half turn in [-pi/2, pi/2).
    """

    cx: float
    cy: float
    width: float
    height: float
    angle: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.width, self.height, self.angle)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("RotatedRect fields must be finite")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"RotatedRect needs positive extent, got {self.width} x {self.height}")
        object.__setattr__(self, "angle", _wrap_half_turn(float(self.angle)))

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([c, s]), np.array([-s, c])

    @property
    def area(self) -> float:
        return self.width * self.height

    def corners(self) -> np.ndarray:
        """Four corners in counterclockwise order (in a y-up sense)."""
        u, v = self.axes
        c = np.array([self.cx, self.cy])
        hw, hh = self.width / 2, self.height / 2
        return np.array([c - hw * u - hh * v, c + hw * u - hh * v, c + hw * u + hh * v, c - hw * u + hh * v])

    def contains(self, pts, slack: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        u, v = self.axes
        d = pts - np.array([self.cx, self.cy])
        return (np.abs(d @ u) <= self.width / 2 + slack) & (np.abs(d @ v) <= self.height / 2 + slack)

    def to_json(self) -> dict:
        return {
            "cx": self.cx,
            "cy": self.cy,
            "w": self.width,
            "h": self.height,
            "angle_deg": math.degrees(self.angle),
        }

    @classmethod
    def from_json(cls, d: dict) -> "RotatedRect":
        return cls(float(d["cx"]), float(d["cy"]), float(d["w"]), float(d["h"]), math.radians(float(d["angle_deg"])))


@dataclass(frozen=True)
class Mask:
    bits: np.ndarray  # bool [h, w]

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ValueError(f"mask must be a nonempty 2-D grid, got shape {b.shape}")
        object.__setattr__(self, "bits", b)

    @property
    def w(self) -> int:
        return self.bits.shape[1]

    @property
    def h(self) -> int:
        return self.bits.shape[0]

    def pixel_centers(self) -> np.ndarray:
        rows, cols = np.nonzero(self.bits)
        return np.column_stack([cols + 0.5, rows + 0.5]).astype(np.float64)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Monotone-chain hull, counterclockwise, collinear points dropped.

    All-collinear input returns its two extreme points; a single distinct
    point returns that point.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("convex_hull needs at least one point")
    uniq = sorted(set(map(tuple, pts.tolist())))
    if len(uniq) == 1:
        return np.array(uniq)

    def chain(seq):
        out: list = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = chain(uniq)
    upper = chain(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 2:
        hull = [uniq[0], uniq[-1]]
    return np.array(hull)


def _canonical_quarter(theta: float) -> float:
    """Representative of theta modulo pi/2 in [-pi/4, pi/4)."""
    q = math.pi / 2
    t = math.fmod(theta, q)
    if t < 0:
        t += q
    if t >= q / 2:
        t -= q
    return t


def _rect_at_angle(pts: np.ndarray, theta: float) -> RotatedRect:
    u = np.array([math.cos(theta), math.sin(theta)])
    v = np.array([-math.sin(theta), math.cos(theta)])
    pu, pv = pts @ u, pts @ v
    lo_u, hi_u, lo_v, hi_v = pu.min(), pu.max(), pv.min(), pv.max()
    mu, mv = (lo_u + hi_u) / 2, (lo_v + hi_v) / 2
    c = mu * u + mv * v
    return RotatedRect(float(c[0]), float(c[1]), float(hi_u - lo_u), float(hi_v - lo_v), theta)


def min_rotated_rect(mask: Mask) -> RotatedRect:
    """Minimum-area oriented rectangle around the set pixel centers.

    Candidate orientations are the hull edge directions. The result is
    reported with its angle in [-pi/4, pi/4), so ``width`` is the extent
    along the near-horizontal side and ``height`` along the near-vertical one.
    """
    pts = mask.pixel_centers()
    if len(pts) == 0:
        raise EmptyOrDegenerate("mask has no set pixels")
    hull = convex_hull(pts)
    if len(hull) < 3:
        raise EmptyOrDegenerate("mask pixel centers are collinear")
    best = None
    seen = set()
    for i in range(len(hull)):
        e = hull[(i + 1) % len(hull)] - hull[i]
        theta = _canonical_quarter(math.atan2(e[1], e[0]))
        key = round(theta, 12)
        if key in seen:
            continue
        seen.add(key)
        r = _rect_at_angle(hull, theta)
        if best is None or r.area < best.area - 1e-12:
            best = r
    return best


def resize_with_fixed_dim(rect: RotatedRect, expand_dir: ExpandDir, aspect_hw: float) -> RotatedRect:
    """Match a height/width ratio by growing the free side.

    ``Up`` keeps the width and the bottom-edge midpoint; the box grows
    towards -v (image up when the angle is 0). ``LeftRight`` keeps the
    height and the center.
    """
    if not aspect_hw > 0:
        raise ValueError(f"aspect must be positive, got {aspect_hw}")
    expand_dir = ExpandDir(expand_dir)
    if expand_dir is ExpandDir.UP:
        new_h = rect.width * aspect_hw
        if new_h == rect.height:
            return rect
        _, v = rect.axes
        shift = (rect.height - new_h) / 2
        return RotatedRect(rect.cx + shift * v[0], rect.cy + shift * v[1], rect.width, new_h, rect.angle)
    if expand_dir is ExpandDir.LEFT_RIGHT:
        new_w = rect.height / aspect_hw
        if new_w == rect.width:
            return rect
        return RotatedRect(rect.cx, rect.cy, new_w, rect.height, rect.angle)
    raise ValueError("Free expansion has no fixed dimension to resize against")


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex ``clipper``.

    Both polygons must share the same orientation (counterclockwise in
    the y-up sense used by :meth:`RotatedRect.corners`).
    """
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        inp, out = out, []
        for j in range(len(inp)):
            p, q = np.array(inp[j]), np.array(inp[(j + 1) % len(inp)])
            p_in = _cross(a, b, p) >= 0
            q_in = _cross(a, b, q) >= 0
            if p_in:
                out.append(tuple(p))
            if p_in != q_in:
                d1, d2 = _cross(a, b, p), _cross(a, b, q)
                t = d1 / (d1 - d2)
                out.append(tuple(p + t * (q - p)))
    return np.array(out) if out else np.zeros((0, 2))


def rect_iou(a: RotatedRect, b: RotatedRect) -> float:
    inter = polygon_area(clip_convex(a.corners(), b.corners()))
    union = a.area + b.area - inter
    return float(min(1.0, max(0.0, inter / union)))


# -- PGM masks -----------------------------------------------------------------

def _pgm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    toks, i = [], 0
    while len(toks) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PGM header")
        toks.append(buf[i:j])
        i = j
    return toks, i + 1


def read_pgm_mask(path) -> Mask:
    """Binary PGM (P5, maxval 255); pixels >= 128 are set."""
    with open(path, "rb") as fh:
        buf = fh.read()
    toks, off = _pgm_tokens(buf, 4)
    if toks[0] != b"P5":
        raise ValueError(f"not a P5 PGM file: {toks[0]!r}")
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=off)
    return Mask(data.reshape(h, w) >= 128)


def pgm_bytes(mask: Mask) -> bytes:
    return f"P5\n{mask.w} {mask.h}\n255\n".encode() + (mask.bits.astype(np.uint8) * 255).tobytes()
