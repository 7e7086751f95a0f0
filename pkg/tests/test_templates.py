import json
import math
from dataclasses import replace
from importlib.resources import files
from pathlib import Path

import numpy as np
import pytest

from guidestage import templates as tpl
from guidestage.body import (
    JOINT_INDEX,
    JOINTS,
    BodyPose,
    Camera,
    Grasp,
    Orientation,
    hand_anchor,
    joint_positions_3d,
    projected_forearm,
    rest_pose,
    retarget,
)
from guidestage.captions import parse_caption
from guidestage.geometry import ExpandDir, Mask, RotatedRect, min_rotated_rect, read_pgm_mask
from guidestage.oracles import brute_force_match, min_rect_area_sweep
from guidestage.templates import (
    Action,
    FixedDim,
    HoldingHand,
    HumanInput,
    MotionTemplate,
    NoTemplate,
    ProductSpec,
    compose_sequence,
    compile_guidance,
    match_template,
    retarget_box_track,
)
from guidestage.testing import random_pool

DATA = files("guidestage") / "data"
GOLDEN = Path(__file__).parent / "golden" / "plan.json"
CAM = tpl.DEFAULT_CAMERA


def _hold(tid="h", hand=HoldingHand.RIGHT, size=(1, 40), orient=Orientation.FRONTAL, table=False,
          expand=ExpandDir.UP, n=1):
    pose = rest_pose(yaw={Orientation.FRONTAL: 0.0, Orientation.RIGHT: math.pi / 2}.get(orient, 0.0))
    fixed = FixedDim.HEIGHT if expand is ExpandDir.LEFT_RIGHT else FixedDim.WIDTH
    return MotionTemplate(tid, Action.SINGLE_GRASP, (pose,) * n, (RotatedRect(0.0, 0.0, 2.0, 3.0),) * n, expand,
                          fixed, size, orient, table, hand)


def _square_mask(n=20):
    bits = np.zeros((32, 32), dtype=bool)
    bits[4 : 4 + n, 6 : 6 + n] = True
    return Mask(bits)


# -- template type ---------------------------------------------------------------

def test_template_invariants():
    with pytest.raises(ValueError):
        _hold(size=(0.5, 10))
    with pytest.raises(ValueError):
        _hold(size=(10, 41))
    with pytest.raises(ValueError):
        _hold(size=(20, 10))
    with pytest.raises(ValueError):
        MotionTemplate("x", Action.LIFT, (rest_pose(),) * 2, (RotatedRect(0, 0, 1, 1),), holding_hand=HoldingHand.LEFT)
    with pytest.raises(ValueError):
        MotionTemplate("x", Action.LIFT, (rest_pose(),), (RotatedRect(0, 0, 1, 1),), ExpandDir.UP, FixedDim.HEIGHT,
                       holding_hand=HoldingHand.LEFT)
    with pytest.raises(ValueError):
        MotionTemplate("x", Action.HEAD_TALK, ())


def test_pool_json_roundtrip_and_version():
    pool = tpl.build_example_pool()
    doc = tpl.pool_to_json(pool)
    assert doc["pool_version"] == 1 and len(doc["templates"]) == 8
    back = tpl.pool_from_json(json.loads(json.dumps(doc)))
    assert [t.to_json() for t in back] == [t.to_json() for t in pool]
    with pytest.raises(ValueError):
        tpl.pool_from_json({"pool_version": 2, "templates": []})
    with pytest.raises(ValueError):
        tpl.pool_from_json({"pool_version": 1, "templates": [pool[0].to_json()] * 2})


def test_bundled_pool_file_matches_builder():
    bundled = tpl.load_pool(DATA / "pool.json")
    assert [t.to_json() for t in bundled] == [t.to_json() for t in tpl.build_example_pool()]


# -- matching --------------------------------------------------------------------

def test_single_candidate_is_returned():
    pool = [_hold("only"), _hold("head", hand=HoldingHand.NONE)]
    assert match_template(pool, ProductSpec(10.0), Orientation.FRONTAL, False) == "only"


def test_oversized_product_has_no_template():
    with pytest.raises(NoTemplate):
        match_template(tpl.build_example_pool(), ProductSpec(50.0), Orientation.FRONTAL, False)


def test_smallest_range_then_lexicographic_id():
    pool = [_hold("b", size=(5, 15)), _hold("a", size=(1, 40)), _hold("c", size=(8, 18)), _hold("a2", size=(6, 16))]
    assert match_template(pool, ProductSpec(10.0), Orientation.FRONTAL, False) == "a2"


def test_table_requirement_must_match_exactly():
    pool = [_hold("table", table=True), _hold("free", table=False, size=(5, 12))]
    assert match_template(pool, ProductSpec(10.0), Orientation.FRONTAL, True) == "table"
    assert match_template(pool, ProductSpec(10.0), Orientation.FRONTAL, False) == "free"


def test_empty_pool_rejected():
    with pytest.raises(ValueError):
        match_template([], ProductSpec(10.0), Orientation.FRONTAL, False)


def test_random_pools_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pool = random_pool(rng, int(rng.integers(1, 12)))
        size = float(rng.uniform(0.5, 45))
        orient = list(Orientation)[int(rng.integers(4))]
        table = bool(rng.integers(2))
        expected = brute_force_match(pool, size, orient, table)
        if expected is None:
            with pytest.raises(NoTemplate):
                match_template(pool, ProductSpec(size), orient, table)
            continue
        got = match_template(pool, ProductSpec(size), orient, table)
        assert got == expected
        t = next(t for t in pool if t.id == got)
        assert t.size_range_cm[0] <= size <= t.size_range_cm[1]
        assert t.orientation is orient and t.requires_table == table


def test_aux_templates_pick_smallest_id():
    pool = tpl.build_example_pool()
    assert tpl.match_aux_template(pool, Action.HEAD_TALK, Orientation.FRONTAL) == "head_talk_front"
    with pytest.raises(NoTemplate):
        tpl.match_aux_template(pool, Action.HEAD_TALK, Orientation.BACK)


# -- composition ---------------------------------------------------------------------

def _animated(tid, action, n, rng, hand=HoldingHand.NONE, orient=Orientation.FRONTAL):
    frames = tuple(
        BodyPose(np.array([0.0, 0.0, 3.0]), 0.0, 1.0, rng.uniform(-0.4, 0.4, (len(JOINTS), 3)))
        for _ in range(n)
    )
    boxes = tuple(RotatedRect(0.0, 0.0, 2.0, 3.0) for _ in range(n)) if hand is not HoldingHand.NONE else ()
    expand = ExpandDir.UP if hand is not HoldingHand.NONE else ExpandDir.FREE
    return MotionTemplate(tid, action, frames, boxes, expand, FixedDim.WIDTH, (1, 40), orient, False, hand)


def test_two_hand_hold_needs_no_other_hand():
    two = next(t for t in tpl.build_example_pool() if t.holding_hand is HoldingHand.BOTH)
    head = next(t for t in tpl.build_example_pool() if t.action is Action.HEAD_TALK)
    seq = compose_sequence(two, head)
    assert len(seq) == len(two.frames)
    for name in ("l_elbow", "l_wrist", "r_elbow", "r_wrist"):
        i = JOINT_INDEX[name]
        assert all(np.array_equal(p.joints[i], f.joints[i]) for p, f in zip(seq, two.frames))


def test_rest_templates_compose_to_rest():
    hold = _hold(n=3)
    head = MotionTemplate("head", Action.HEAD_TALK, (rest_pose(),))
    other = MotionTemplate("other", Action.HAND_DEMO, (rest_pose(),) * 2)
    for p in compose_sequence(hold, head, other):
        assert not p.joints.any()


def test_random_merge_provenance():
    rng = np.random.default_rng(1)
    for hand in (HoldingHand.LEFT, HoldingHand.RIGHT, HoldingHand.BOTH):
        hold = _animated("hold", Action.LIFT, 7, rng, hand)
        head = _animated("head", Action.HEAD_TALK, 3, rng)
        other = _animated("other", Action.HAND_DEMO, 4, rng) if hand is not HoldingHand.BOTH else None
        seq = compose_sequence(hold, head, other)
        assert len(seq) == 7
        free = {HoldingHand.LEFT: "r_", HoldingHand.RIGHT: "l_"}.get(hand)
        for k, pose in enumerate(seq):
            for name in JOINTS:
                if name in ("spine", "head"):
                    src = head.frames[k % 3]
                elif free and name.startswith(free) and name[2:] in ("shoulder", "elbow", "wrist"):
                    src = other.frames[k % 4]
                else:
                    src = hold.frames[k]
                i = JOINT_INDEX[name]
                assert np.array_equal(pose.joints[i], src.joints[i]), (hand, k, name)
            assert np.array_equal(pose.root, hold.frames[k].root)


def test_compose_errors():
    rng = np.random.default_rng(2)
    hold = _animated("hold", Action.LIFT, 2, rng, HoldingHand.LEFT)
    head = _animated("head", Action.HEAD_TALK, 2, rng)
    with pytest.raises(ValueError):
        compose_sequence(hold, head)
    with pytest.raises(ValueError):
        compose_sequence(hold, _animated("h2", Action.HEAD_TALK, 2, rng, orient=Orientation.BACK),
                         _animated("o", Action.HAND_DEMO, 2, rng))


# -- box retargeting ---------------------------------------------------------------

def _project(p, cam):
    return np.array([cam.focal * p[0] / p[2] + cam.principal[0], cam.focal * p[1] / p[2] + cam.principal[1]])


def _anchor_oracle(pose, side, cam):
    p = joint_positions_3d(pose)
    pre = "l_" if side == "Left" else "r_"
    e, w = _project(p[JOINT_INDEX[pre + "elbow"]], cam), _project(p[JOINT_INDEX[pre + "wrist"]], cam)
    return w + 0.5 * (w - e), float(np.linalg.norm(w - e))


def test_identity_retarget_reproduces_template_track():
    pool = tpl.build_example_pool()
    for hold in pool:
        if hold.holding_hand is HoldingHand.NONE:
            continue
        spec = ProductSpec(10.0, aspect_hw=hold.box_track[0].height / hold.box_track[0].width)
        out = retarget_box_track(hold, list(hold.frames), spec, CAM)
        for a, b in zip(out, hold.box_track):
            if hold.expand_dir is ExpandDir.FREE or abs(b.height / b.width - spec.aspect_hw) < 1e-12:
                for f in ("cx", "cy", "width", "height", "angle"):
                    assert abs(getattr(a, f) - getattr(b, f)) < 1e-9, (hold.id, f)


def test_two_anchors_120px_apart():
    cam = Camera(150.0, (100.0, 100.0), (200, 200))
    # rest anchors sit 0.30 m either side of the spine; pick the depth that puts them 120 px apart
    pose = rest_pose((0.0, 0.0, 3.0))
    l, _ = _anchor_oracle(pose, "Left", cam)
    r, _ = _anchor_oracle(pose, "Right", cam)
    hold = MotionTemplate("two", Action.TWO_HAND_HOLD, (pose,), (RotatedRect(0, 0, 5, 5),), ExpandDir.FREE,
                          FixedDim.WIDTH, (1, 40), Orientation.FRONTAL, False, HoldingHand.BOTH)
    scaled = replace(pose, root=np.array([0.0, 0.0, 3.0 * np.linalg.norm(l - r) / 120.0]))
    box = retarget_box_track(hold, [scaled], ProductSpec(10.0), cam)[0]
    la, _ = _anchor_oracle(scaled, "Left", cam)
    ra, _ = _anchor_oracle(scaled, "Right", cam)
    assert np.linalg.norm(la - ra) == pytest.approx(120.0, abs=1e-9)
    assert box.width == pytest.approx(120.0, abs=1e-9)
    assert np.allclose([box.cx, box.cy], (la + ra) / 2, atol=1e-9)


def test_random_single_hand_retargets_match_formula():
    pool = tpl.build_example_pool()
    holds = [t for t in pool if t.holding_hand in (HoldingHand.LEFT, HoldingHand.RIGHT)]
    rng = np.random.default_rng(3)
    for _ in range(100):
        hold = holds[int(rng.integers(len(holds)))]
        side = hold.holding_hand.value
        ident = tpl.HumanInput(rng.uniform([-0.3, -0.1, 2.6], [0.3, 0.1, 3.6]), float(rng.uniform(-0.5, 0.5)),
                               float(rng.uniform(0.8, 1.2))).identity()
        poses = retarget(list(hold.frames), ident)
        spec = ProductSpec(10.0, aspect_hw=float(rng.uniform(0.3, 3.0)))
        boxes = retarget_box_track(hold, poses, spec, CAM)
        for tpose, rpose, tbox, box in zip(hold.frames, poses, hold.box_track, boxes):
            ta, tf = _anchor_oracle(tpose, side, CAM)
            ra, rf = _anchor_oracle(rpose, side, CAM)
            c = ra + (rf / tf) * (np.array([tbox.cx, tbox.cy]) - ta)
            w, h = tbox.width * rf / tf, tbox.height * rf / tf
            if hold.expand_dir is ExpandDir.UP:
                # bottom-edge midpoint stays put while the height grows to width * aspect
                down = np.array([-math.sin(tbox.angle), math.cos(tbox.angle)])
                c = c + down * h / 2 - down * (w * spec.aspect_hw) / 2
            elif hold.expand_dir is ExpandDir.LEFT_RIGHT:
                w = h / spec.aspect_hw
            assert np.linalg.norm(np.array([box.cx, box.cy]) - c) < 1e-6
            if hold.expand_dir is not ExpandDir.FREE:
                assert box.width == pytest.approx(w if hold.expand_dir is ExpandDir.UP else h / spec.aspect_hw)


def test_box_track_length_mismatch():
    hold = next(t for t in tpl.build_example_pool() if t.holding_hand is HoldingHand.RIGHT)
    with pytest.raises(ValueError):
        retarget_box_track(hold, list(hold.frames[:-1]), ProductSpec(10.0), CAM)


# -- compiler -------------------------------------------------------------------------

def _bundled_inputs():
    human = HumanInput.from_json(json.loads((DATA / "human.json").read_text()))
    prod, _ = parse_caption((DATA / "caption.txt").read_text().splitlines()[0])
    spec = ProductSpec(prod.size_cm, read_pgm_mask(DATA / "bottle_mask.pgm"))
    return human, spec, tpl.load_pool(DATA / "pool.json")


def test_minimal_pool_plan_uses_those_ids():
    pool = tpl.build_example_pool()
    keep = {"lift_mid_r_front", "head_talk_front", "hand_demo_front"}
    plan = compile_guidance(HumanInput(np.array([0.0, 0.0, 3.0])), ProductSpec(20.0, _square_mask()),
                            [t for t in pool if t.id in keep], CAM)
    assert (plan.hold_id, plan.head_id, plan.other_hand_id) == ("lift_mid_r_front", "head_talk_front",
                                                               "hand_demo_front")
    assert plan.frame_count == len(plan.boxes) == 16


@pytest.mark.parametrize("size", [5.0, 10.0, 20.0, 30.0])
def test_square_mask_gives_square_boxes(size):
    plan = compile_guidance(HumanInput(np.array([0.0, 0.0, 3.0])), ProductSpec(size, _square_mask()),
                            tpl.build_example_pool(), CAM)
    assert plan.expand_dir is not ExpandDir.FREE
    for b in plan.boxes:
        assert abs(b.height / b.width - 1.0) < 1e-9


def test_single_hand_boxes_stay_near_the_hand():
    rng = np.random.default_rng(4)
    pool = tpl.build_example_pool()
    for _ in range(20):
        human = HumanInput(rng.uniform([-0.3, -0.1, 2.6], [0.3, 0.1, 3.6]), float(rng.uniform(-0.6, 0.6)),
                           float(rng.uniform(0.8, 1.2)))
        plan = compile_guidance(human, ProductSpec(float(rng.uniform(1, 14)), _square_mask(int(rng.integers(3, 20)))),
                                pool, CAM)
        side = plan.holding_hand.value
        for p, b in zip(plan.poses, plan.boxes):
            a = hand_anchor(p, side, CAM)
            assert math.hypot(b.cx - a[0], b.cy - a[1]) <= 2 * projected_forearm(p, side, CAM)


def test_compile_errors_propagate():
    pool = tpl.build_example_pool()
    human = HumanInput(np.array([0.0, 0.0, 3.0]))
    with pytest.raises(NoTemplate):
        compile_guidance(human, ProductSpec(60.0, _square_mask()), pool, CAM)
    empty = Mask(np.zeros((8, 8), dtype=bool))
    from guidestage.geometry import EmptyOrDegenerate

    with pytest.raises(EmptyOrDegenerate):
        compile_guidance(human, ProductSpec(10.0, empty), pool, CAM)


def test_aspect_ignores_stray_pixels():
    bits = _square_mask(12).bits.copy()
    bits[30, 0] = True
    assert tpl.mask_aspect(Mask(bits)) == pytest.approx(1.0, abs=1e-12)


def test_bundled_mask_rect_matches_sweep():
    _, spec, _ = _bundled_inputs()
    rect = min_rotated_rect(spec.mask)
    sweep = min_rect_area_sweep(spec.mask.pixel_centers())
    assert abs(rect.area - sweep) / sweep < 0.01


def test_golden_plan_is_byte_identical():
    human, spec, pool = _bundled_inputs()
    plan = compile_guidance(human, spec, pool, CAM)
    assert plan.dumps() == GOLDEN.read_text()
    assert compile_guidance(human, spec, pool, CAM).dumps() == plan.dumps()


def test_plan_json_roundtrip():
    plan = tpl.GuidancePlan.from_json(json.loads(GOLDEN.read_text()))
    assert plan.dumps() == GOLDEN.read_text()
    assert plan.poses[0].grasp[1] is Grasp.SINGLE
