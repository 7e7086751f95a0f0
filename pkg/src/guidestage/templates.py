"""Motion template pool and the guidance compiler.

Given a target person and a product, the compiler picks a hold template
(product size, body orientation, table availability), a head/trunk
template and, for single-hand holds, a demonstration template for the
free arm. It merges them into one pose sequence, moves that sequence onto
the target identity and re-fits the product box track to the moved hands.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .body import (
    ARM_CHAINS,
    HEAD_GROUP,
    JOINT_INDEX,
    BodyPose,
    Camera,
    Grasp,
    Identity,
    Orientation,
    hand_anchor,
    orientation_class,
    projected_forearm,
    retarget,
)
from .geometry import ExpandDir, Mask, RotatedRect, min_rotated_rect, resize_with_fixed_dim

POOL_VERSION = 1
PLAN_VERSION = 1
MIN_SIZE_CM, MAX_SIZE_CM = 1.0, 40.0
# Two-hand box width relative to the inter-anchor distance.
TWO_HAND_WIDTH_FACTOR = 1.0


class NoTemplate(LookupError):
    pass


class Action(str, enum.Enum):
    SINGLE_GRASP = "SingleGrasp"
    LIFT = "Lift"
    PICK_UP = "PickUp"
    RAISE = "Raise"
    TWO_HAND_HOLD = "TwoHandHold"
    TABLE_GRAB = "TableGrab"
    HEAD_TALK = "HeadTalk"
    HAND_DEMO = "HandDemo"


class HoldingHand(str, enum.Enum):
    LEFT = "Left"
    RIGHT = "Right"
    BOTH = "Both"
    NONE = "None"


class FixedDim(str, enum.Enum):
    WIDTH = "Width"
    HEIGHT = "Height"


@dataclass(frozen=True)
class MotionTemplate:
    id: str
    action: Action
    frames: tuple[BodyPose, ...]
    box_track: tuple[RotatedRect, ...] = ()
    expand_dir: ExpandDir = ExpandDir.FREE
    fixed_dim: FixedDim = FixedDim.WIDTH
    size_range_cm: tuple[float, float] = (MIN_SIZE_CM, MAX_SIZE_CM)
    orientation: Orientation = Orientation.FRONTAL
    requires_table: bool = False
    holding_hand: HoldingHand = HoldingHand.NONE

    def __post_init__(self):
        for name, typ in (
            ("action", Action),
            ("expand_dir", ExpandDir),
            ("fixed_dim", FixedDim),
            ("orientation", Orientation),
            ("holding_hand", HoldingHand),
        ):
            object.__setattr__(self, name, typ(getattr(self, name)))
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "box_track", tuple(self.box_track))
        lo, hi = (float(v) for v in self.size_range_cm)
        object.__setattr__(self, "size_range_cm", (lo, hi))
        if not self.frames:
            raise ValueError(f"template {self.id!r} has no frames")
        if not (MIN_SIZE_CM <= lo <= hi <= MAX_SIZE_CM):
            raise ValueError(f"template {self.id!r}: size range {lo}..{hi} outside [1, 40] cm")
        if self.holding_hand is not HoldingHand.NONE and len(self.box_track) != len(self.frames):
            raise ValueError(f"template {self.id!r}: box track length differs from frame count")
        expected = {ExpandDir.UP: FixedDim.WIDTH, ExpandDir.LEFT_RIGHT: FixedDim.HEIGHT}.get(self.expand_dir)
        if expected is not None and self.fixed_dim is not expected:
            raise ValueError(f"template {self.id!r}: {self.expand_dir.value} requires fixed {expected.value}")
        if self.holding_hand is HoldingHand.BOTH and self.expand_dir is ExpandDir.LEFT_RIGHT:
            # two-hand width is set by the hands; LeftRight would overwrite it
            raise ValueError(f"template {self.id!r}: two-hand holds cannot expand left/right")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "action": self.action.value,
            "holding_hand": self.holding_hand.value,
            "orientation": self.orientation.value,
            "expand_dir": self.expand_dir.value,
            "fixed_dim": self.fixed_dim.value,
            "size_range_cm": list(self.size_range_cm),
            "requires_table": self.requires_table,
            "frames": [p.to_json() for p in self.frames],
            "box_track": [r.to_json() for r in self.box_track],
        }

    @classmethod
    def from_json(cls, d: dict) -> "MotionTemplate":
        return cls(
            id=str(d["id"]),
            action=Action(d["action"]),
            frames=tuple(BodyPose.from_json(p) for p in d["frames"]),
            box_track=tuple(RotatedRect.from_json(r) for r in d.get("box_track", [])),
            expand_dir=ExpandDir(d.get("expand_dir", "Free")),
            fixed_dim=FixedDim(d.get("fixed_dim", "Width")),
            size_range_cm=tuple(d.get("size_range_cm", (MIN_SIZE_CM, MAX_SIZE_CM))),
            orientation=Orientation(d.get("orientation", "Frontal")),
            requires_table=bool(d.get("requires_table", False)),
            holding_hand=HoldingHand(d.get("holding_hand", "None")),
        )


@dataclass(frozen=True)
class ProductSpec:
    """Product facts the compiler needs.

    ``size_cm`` is the longest physical side. ``aspect_hw`` is recomputed
    from the mask by :func:`compile_guidance`.
    """

    size_cm: float
    mask: Mask | None = None
    aspect_hw: float = 1.0
    caption: object | None = None

    def __post_init__(self):
        if not (0 < self.size_cm <= 100):
            raise ValueError(f"product size must lie in (0, 100] cm, got {self.size_cm}")
        if not self.aspect_hw > 0:
            raise ValueError(f"aspect must be positive, got {self.aspect_hw}")


@dataclass(frozen=True)
class HumanInput:
    root: np.ndarray
    yaw: float = 0.0
    shape_scale: float = 1.0
    has_table: bool = False

    def identity(self) -> Identity:
        return Identity(np.asarray(self.root, dtype=np.float64), self.yaw, self.shape_scale)

    @classmethod
    def from_json(cls, d: dict) -> "HumanInput":
        return cls(
            root=np.asarray(d["root"], dtype=np.float64).reshape(3),
            yaw=float(d.get("yaw", 0.0)),
            shape_scale=float(d.get("shape_scale", 1.0)),
            has_table=bool(d.get("has_table", False)),
        )


@dataclass(frozen=True)
class GuidancePlan:
    hold_id: str
    head_id: str
    other_hand_id: str | None
    poses: tuple[BodyPose, ...]
    boxes: tuple[RotatedRect, ...]
    expand_dir: ExpandDir = ExpandDir.FREE
    aspect_hw: float = 1.0
    holding_hand: HoldingHand = HoldingHand.NONE

    def __post_init__(self):
        if len(self.poses) != len(self.boxes):
            raise ValueError("plan pose and box sequences differ in length")

    @property
    def frame_count(self) -> int:
        return len(self.poses)

    def to_json(self) -> dict:
        return {
            "plan_version": PLAN_VERSION,
            "hold_template": self.hold_id,
            "head_template": self.head_id,
            "other_hand_template": self.other_hand_id,
            "holding_hand": self.holding_hand.value,
            "expand_dir": self.expand_dir.value,
            "aspect_hw": self.aspect_hw,
            "frame_count": self.frame_count,
            "poses": [p.to_json() for p in self.poses],
            "boxes": [b.to_json() for b in self.boxes],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "GuidancePlan":
        return cls(
            hold_id=d["hold_template"],
            head_id=d["head_template"],
            other_hand_id=d.get("other_hand_template"),
            poses=tuple(BodyPose.from_json(p) for p in d["poses"]),
            boxes=tuple(RotatedRect.from_json(b) for b in d["boxes"]),
            expand_dir=ExpandDir(d.get("expand_dir", "Free")),
            aspect_hw=float(d.get("aspect_hw", 1.0)),
            holding_hand=HoldingHand(d.get("holding_hand", "None")),
        )


# -- pool IO -------------------------------------------------------------------

def load_pool(path) -> list[MotionTemplate]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return pool_from_json(doc)


def pool_from_json(doc: dict) -> list[MotionTemplate]:
    if doc.get("pool_version") != POOL_VERSION:
        raise ValueError(f"unsupported pool_version {doc.get('pool_version')!r}")
    pool = [MotionTemplate.from_json(t) for t in doc["templates"]]
    ids = [t.id for t in pool]
    if len(set(ids)) != len(ids):
        raise ValueError("template ids must be unique")
    return pool


def pool_to_json(pool: Iterable[MotionTemplate]) -> dict:
    return {"pool_version": POOL_VERSION, "templates": [t.to_json() for t in pool]}


# -- matching ------------------------------------------------------------------

def match_template(
    pool: Sequence[MotionTemplate],
    spec: ProductSpec,
    orient: Orientation,
    needs_table: bool,
) -> str:
    """Pick the hold template with the tightest size range that fits.

    Hard constraints: a holding hand, a size range containing the product
    size, the same orientation and the same table requirement. Ties on
    range width go to the smallest id.
    """
    if not pool:
        raise ValueError("template pool is empty")
    orient = Orientation(orient)
    best = None
    for t in pool:
        lo, hi = t.size_range_cm
        if t.holding_hand is HoldingHand.NONE or not (lo <= spec.size_cm <= hi):
            continue
        if t.orientation is not orient or t.requires_table != bool(needs_table):
            continue
        key = (hi - lo, t.id)
        if best is None or key < best:
            best = key
    if best is None:
        raise NoTemplate(
            f"no hold template for {spec.size_cm} cm, {orient.value}, table={bool(needs_table)}"
        )
    return best[1]


def match_aux_template(pool: Sequence[MotionTemplate], action: Action, orient: Orientation) -> str:
    """Head/trunk or free-hand template: same orientation, smallest id."""
    ids = sorted(t.id for t in pool if t.action is Action(action) and t.orientation is Orientation(orient))
    if not ids:
        raise NoTemplate(f"no {Action(action).value} template for {Orientation(orient).value}")
    return ids[0]


# -- composition ---------------------------------------------------------------

def _holding_sides(hand: HoldingHand) -> tuple[str, ...]:
    return {HoldingHand.LEFT: ("Left",), HoldingHand.RIGHT: ("Right",), HoldingHand.BOTH: ("Left", "Right")}.get(
        hand, ()
    )


def joint_sources(hold: MotionTemplate, other_hand: MotionTemplate | None) -> dict[str, str]:
    """Which template ('hold', 'head', 'other' or 'rest') drives each joint."""
    src = {name: "hold" for name in JOINT_INDEX}
    for name in HEAD_GROUP:
        src[name] = "head"
    held = _holding_sides(hold.holding_hand)
    for side, chain in ARM_CHAINS.items():
        if side not in held:
            for name in chain:
                src[name] = "other" if other_hand is not None else "rest"
    return src


def compose_sequence(
    hold: MotionTemplate,
    head: MotionTemplate,
    other_hand: MotionTemplate | None = None,
) -> list[BodyPose]:
    if head.orientation is not hold.orientation:
        raise ValueError(f"head template {head.id!r} orientation differs from hold {hold.id!r}")
    single = hold.holding_hand in (HoldingHand.LEFT, HoldingHand.RIGHT)
    if hold.holding_hand is HoldingHand.NONE:
        raise ValueError(f"template {hold.id!r} does not hold anything")
    if single and other_hand is None:
        raise ValueError("single-hand holds need a template for the other hand")
    if not single and other_hand is not None:
        raise ValueError("two-hand holds take no other-hand template")
    if other_hand is not None and other_hand.orientation is not hold.orientation:
        raise ValueError(f"other-hand template {other_hand.id!r} orientation differs from hold")

    src = joint_sources(hold, other_hand)
    rows = {k: np.array([JOINT_INDEX[n] for n, s in src.items() if s == k], dtype=int) for k in ("head", "other", "rest")}
    out = []
    for k, base in enumerate(hold.frames):
        joints = base.joints.copy()
        joints[rows["head"]] = head.frames[k % len(head.frames)].joints[rows["head"]]
        if other_hand is not None:
            joints[rows["other"]] = other_hand.frames[k % len(other_hand.frames)].joints[rows["other"]]
        joints[rows["rest"]] = 0.0
        out.append(replace(base, joints=joints))
    return out


# -- box retargeting -----------------------------------------------------------

def _two_hand_box(pose: BodyPose, cam: Camera, height: float) -> tuple[RotatedRect, float]:
    left = hand_anchor(pose, "Left", cam)
    right = hand_anchor(pose, "Right", cam)
    d = left - right
    dist = float(math.hypot(d[0], d[1]))
    mid = (left + right) / 2
    rect = RotatedRect(float(mid[0]), float(mid[1]), TWO_HAND_WIDTH_FACTOR * dist, height, math.atan2(d[1], d[0]))
    return rect, dist


def retarget_box_track(
    hold: MotionTemplate,
    retargeted: Sequence[BodyPose],
    spec: ProductSpec,
    cam: Camera,
) -> list[RotatedRect]:
    if len(retargeted) != len(hold.frames):
        raise ValueError("retargeted sequence length differs from hold template")
    sides = _holding_sides(hold.holding_hand)
    out = []
    for k, (tpose, rpose) in enumerate(zip(hold.frames, retargeted)):
        tbox = hold.box_track[k]
        if len(sides) == 2:
            tl = hand_anchor(tpose, "Left", cam)
            tr = hand_anchor(tpose, "Right", cam)
            tdist = float(np.linalg.norm(tl - tr))
            box, dist = _two_hand_box(rpose, cam, 1.0)
            box = replace(box, height=tbox.height * dist / tdist)
        else:
            side = sides[0]
            t_anchor = hand_anchor(tpose, side, cam)
            r_anchor = hand_anchor(rpose, side, cam)
            ratio = projected_forearm(rpose, side, cam) / projected_forearm(tpose, side, cam)
            c = r_anchor + ratio * (np.array([tbox.cx, tbox.cy]) - t_anchor)
            box = RotatedRect(float(c[0]), float(c[1]), tbox.width * ratio, tbox.height * ratio, tbox.angle)
        if hold.expand_dir is not ExpandDir.FREE:
            box = resize_with_fixed_dim(box, hold.expand_dir, spec.aspect_hw)
        out.append(box)
    return out


# -- compiler ------------------------------------------------------------------

def largest_component(mask: Mask) -> Mask:
    labels, n = ndimage.label(mask.bits, structure=np.ones((3, 3), dtype=int))
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    return Mask(labels == keep)


def mask_aspect(mask: Mask) -> float:
    rect = min_rotated_rect(largest_component(mask))
    return rect.height / rect.width


def compile_guidance(
    human: HumanInput,
    spec: ProductSpec,
    pool: Sequence[MotionTemplate],
    cam: Camera,
) -> GuidancePlan:
    if spec.mask is None:
        raise ValueError("product spec needs a mask")
    spec = replace(spec, aspect_hw=mask_aspect(spec.mask))
    ident = human.identity()
    orient = orientation_class(BodyPose(root=ident.root, yaw=ident.yaw, shape_scale=ident.shape_scale))
    by_id = {t.id: t for t in pool}
    hold = by_id[match_template(pool, spec, orient, human.has_table)]
    head = by_id[match_aux_template(pool, Action.HEAD_TALK, orient)]
    other = None
    if hold.holding_hand in (HoldingHand.LEFT, HoldingHand.RIGHT):
        other = by_id[match_aux_template(pool, Action.HAND_DEMO, orient)]
    merged = compose_sequence(hold, head, other)
    poses = retarget(merged, ident)
    boxes = retarget_box_track(hold, poses, spec, cam)
    return GuidancePlan(
        hold_id=hold.id,
        head_id=head.id,
        other_hand_id=other.id if other else None,
        poses=tuple(poses),
        boxes=tuple(boxes),
        expand_dir=hold.expand_dir,
        aspect_hw=spec.aspect_hw,
        holding_hand=hold.holding_hand,
    )


# -- bundled example pool ------------------------------------------------------

DEFAULT_CAMERA = Camera(focal=96.0, principal=(32.0, 32.0), size=(64, 64))
TEMPLATE_ROOT = (0.0, 0.05, 3.2)


def _pose(root, yaw=0.0, angles: dict | None = None, grasp=(Grasp.OPEN, Grasp.OPEN)) -> BodyPose:
    joints = np.zeros((len(JOINT_INDEX), 3))
    for name, vals in (angles or {}).items():
        joints[JOINT_INDEX[name]] = vals
    return BodyPose(root=np.asarray(root, dtype=np.float64), yaw=yaw, joints=joints, grasp=grasp)


def _arm(side: str, upper: float, fore: float) -> dict:
    # Positive z-rotation swings a left-side bone towards the body midline; mirrored on the right.
    s = 1.0 if side == "Left" else -1.0
    _, el, wr = ARM_CHAINS[side]
    return {el: (s * upper, 0.0, 0.0), wr: (s * fore, 0.0, 0.0)}


def _single_hold(tid, action, side, size_range, expand, n=16, lift=0.25, yaw=0.0, orient=Orientation.FRONTAL,
                 table=False, box_wh=(6.0, 9.0), cam=DEFAULT_CAMERA) -> MotionTemplate:
    frames, boxes = [], []
    grasp = (Grasp.SINGLE, Grasp.OPEN) if side == "Left" else (Grasp.OPEN, Grasp.SINGLE)
    for k in range(n):
        ph = 2 * math.pi * k / n
        ang = _arm(side, -0.05 + 0.05 * math.sin(ph), 2.0 + lift * math.sin(ph))
        root = (TEMPLATE_ROOT[0] + 0.02 * math.sin(ph), TEMPLATE_ROOT[1], TEMPLATE_ROOT[2])
        pose = _pose(root, yaw, ang, grasp)
        frames.append(pose)
        a = hand_anchor(pose, side, cam)
        w, h = box_wh
        if expand is ExpandDir.LEFT_RIGHT:
            off = np.array([0.0, 0.0])
        else:
            off = np.array([0.0, -h / 2])
        boxes.append(RotatedRect(float(a[0] + off[0]), float(a[1] + off[1]), w, h, 0.08 * math.sin(ph)))
    fixed = FixedDim.HEIGHT if expand is ExpandDir.LEFT_RIGHT else FixedDim.WIDTH
    return MotionTemplate(tid, action, tuple(frames), tuple(boxes), expand, fixed, size_range, orient, table,
                          HoldingHand(side))


def _two_hand_hold(tid, size_range, n=16, cam=DEFAULT_CAMERA) -> MotionTemplate:
    frames, boxes = [], []
    for k in range(n):
        ph = 2 * math.pi * k / n
        ang = {}
        ang.update(_arm("Left", -1.2 + 0.05 * math.sin(ph), 2.1 + 0.1 * math.sin(ph)))
        ang.update(_arm("Right", -1.2 - 0.05 * math.sin(ph), 2.1 + 0.1 * math.sin(ph)))
        pose = _pose(TEMPLATE_ROOT, 0.0, ang, (Grasp.TWO_HAND, Grasp.TWO_HAND))
        frames.append(pose)
        box, _ = _two_hand_box(pose, cam, 10.0)
        boxes.append(box)
    return MotionTemplate(tid, Action.TWO_HAND_HOLD, tuple(frames), tuple(boxes), ExpandDir.UP, FixedDim.WIDTH,
                          size_range, Orientation.FRONTAL, False, HoldingHand.BOTH)


def _head_talk(tid, n=12) -> MotionTemplate:
    frames = []
    for k in range(n):
        ph = 2 * math.pi * k / n
        ang = {"spine": (0.03 * math.sin(ph), 0.0, 0.0), "head": (0.12 * math.sin(2 * ph), 0.05 * math.cos(ph), 0.0)}
        frames.append(_pose(TEMPLATE_ROOT, 0.0, ang))
    return MotionTemplate(tid, Action.HEAD_TALK, tuple(frames))


def _hand_demo(tid, n=10) -> MotionTemplate:
    frames = []
    for k in range(n):
        ph = 2 * math.pi * k / n
        ang = {}
        ang.update(_arm("Left", 0.3 + 0.5 * math.sin(ph), 0.5 + 0.6 * math.sin(ph)))
        ang.update(_arm("Right", 0.3 + 0.5 * math.sin(ph + 1.0), 0.5 + 0.6 * math.sin(ph + 1.0)))
        frames.append(_pose(TEMPLATE_ROOT, 0.0, ang))
    return MotionTemplate(tid, Action.HAND_DEMO, tuple(frames))


def build_example_pool() -> list[MotionTemplate]:
    """The eight-template pool shipped as ``data/pool.json``."""
    return [
        _single_hold("grasp_small_r_front", Action.SINGLE_GRASP, "Right", (1, 12), ExpandDir.UP, lift=0.15,
                     box_wh=(3.0, 4.0)),
        _single_hold("lift_mid_r_front", Action.LIFT, "Right", (8, 25), ExpandDir.UP, lift=0.35),
        _single_hold("raise_l_front", Action.RAISE, "Left", (5, 30), ExpandDir.LEFT_RIGHT, lift=0.3,
                     box_wh=(8.0, 6.0)),
        _two_hand_hold("hold_two_front", (15, 40)),
        _single_hold("table_grab_r_front", Action.TABLE_GRAB, "Right", (1, 30), ExpandDir.UP, table=True),
        _single_hold("pickup_r_right", Action.PICK_UP, "Right", (1, 40), ExpandDir.FREE, yaw=math.pi / 2,
                     orient=Orientation.RIGHT),
        _head_talk("head_talk_front"),
        _hand_demo("hand_demo_front"),
    ]
