"""Seeded random inputs for property checks (selfcheck and the test-suite)."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .attention import StreamBundle
from .body import Orientation, rest_pose
from .geometry import ExpandDir, Mask, RotatedRect
from .templates import Action, FixedDim, HoldingHand, MotionTemplate


def random_bundle(rng: np.random.Generator, t: int, hw: int, l: int, c: int, mask: str = "random") -> StreamBundle:
    if mask == "random":
        m = rng.uniform(0.0, 1.0, (t, hw))
    elif mask == "zero":
        m = np.zeros((t, hw))
    else:
        m = np.ones((t, hw))
    return StreamBundle(
        vid=rng.standard_normal((t, hw, c)),
        ref=rng.standard_normal((1, hw, c)),
        txt=rng.standard_normal((1, l, c)),
        obj=rng.standard_normal((1, hw, c)),
        mask=m,
    )


def random_small_dims(rng: np.random.Generator, t_max=3, hw_max=16, l_max=8, c_max=8) -> dict:
    heads = int(rng.choice([1, 2]))
    c = heads * int(rng.integers(1, c_max // heads + 1))
    side = int(rng.integers(1, int(math.isqrt(hw_max)) + 1))
    return {
        "t": int(rng.integers(1, t_max + 1)),
        "h": side,
        "w": max(1, min(hw_max // side, int(rng.integers(1, hw_max // side + 1)))),
        "l": int(rng.integers(1, l_max + 1)),
        "c": c,
        "heads": heads,
    }


def random_convex_mask(rng: np.random.Generator, size: int = 48) -> Mask:
    """Rasterised random convex polygon (hull of a few random points).

    Thin slivers can rasterise into separate pieces or a single line of
    pixels; those draws are rejected, so the result is one 8-connected,
    non-collinear region.
    """
    while True:
        n = int(rng.integers(3, 9))
        center = rng.uniform(0.3 * size, 0.7 * size, 2)
        pts = center + rng.uniform(-0.3 * size, 0.3 * size, (n, 2))
        ys, xs = np.mgrid[0:size, 0:size]
        px, py = xs + 0.5, ys + 0.5
        inside = np.ones((size, size), dtype=bool)
        hull = _hull(pts)
        for a, b in zip(hull, np.roll(hull, -1, axis=0)):
            inside &= (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]) >= 0
        if inside.sum() >= 3 and len(hull) >= 3:
            m = Mask(inside)
            centered = m.pixel_centers() - m.pixel_centers().mean(axis=0)
            if np.linalg.matrix_rank(centered) == 2 and ndimage.label(inside, np.ones((3, 3), int))[1] == 1:
                return m


def _hull(pts: np.ndarray) -> np.ndarray:
    # gift wrapping; independent of geometry.convex_hull on purpose
    start = int(np.lexsort((pts[:, 1], pts[:, 0]))[0])
    hull = [start]
    while True:
        cur = hull[-1]
        cand = (cur + 1) % len(pts)
        for j in range(len(pts)):
            d1 = pts[cand] - pts[cur]
            d2 = pts[j] - pts[cur]
            cross = d1[0] * d2[1] - d1[1] * d2[0]
            if cross < 0 or (cross == 0 and d2 @ d2 > d1 @ d1):
                cand = j
        if cand == start:
            break
        hull.append(cand)
        if len(hull) > len(pts):
            break
    return pts[hull]


def random_rect(rng: np.random.Generator, spread: float = 20.0) -> RotatedRect:
    return RotatedRect(
        float(rng.uniform(-spread, spread) / 4),
        float(rng.uniform(-spread, spread) / 4),
        float(rng.uniform(1.0, spread)),
        float(rng.uniform(1.0, spread)),
        float(rng.uniform(-math.pi, math.pi)),
    )


_HOLD_ACTIONS = (Action.SINGLE_GRASP, Action.LIFT, Action.PICK_UP, Action.RAISE, Action.TWO_HAND_HOLD, Action.TABLE_GRAB)


def random_pool(rng: np.random.Generator, n: int) -> list[MotionTemplate]:
    """Metadata-only templates (one rest frame each) with random matching attributes."""
    pose = rest_pose()
    box = RotatedRect(0.0, 0.0, 2.0, 3.0, 0.0)
    orients = list(Orientation)
    hands = list(HoldingHand)
    out = []
    for i in range(n):
        lo = float(rng.integers(1, 40))
        hi = float(rng.integers(int(lo), 41))
        hand = hands[int(rng.integers(len(hands)))]
        action = Action.HEAD_TALK if hand is HoldingHand.NONE else _HOLD_ACTIONS[int(rng.integers(len(_HOLD_ACTIONS)))]
        out.append(
            MotionTemplate(
                id=f"t{int(rng.integers(0, 10 * n)):03d}_{i}",
                action=action,
                frames=(pose,),
                box_track=(box,) if hand is not HoldingHand.NONE else (),
                expand_dir=ExpandDir.UP,
                fixed_dim=FixedDim.WIDTH,
                size_range_cm=(lo, hi),
                orientation=orients[int(rng.integers(len(orients)))],
                requires_table=bool(rng.integers(2)),
                holding_hand=hand,
            )
        )
    return out


def make_grad_problem(seed: int, n_coords: int = 24):
    """Scalar loss of a flat parameter vector: pose_encode -> dit_block -> weighted_fm_loss.

    Returns ``(f, x0, coords)`` for :func:`guidestage.numerics.tape.grad_check`,
    with ``coords`` covering every parameter group.
    """
    from .attention import BlockConfig, BlockWeights, dit_block
    from .flow import RegionWeights, make_flow_sample, weighted_fm_loss
    from .numerics import tape as T
    from .raster import PoseEncoderWeights, concat_with_noise, pose_encode

    rng = np.random.default_rng(seed)
    t, size, c, heads, l = int(rng.integers(1, 3)), 8, 4, int(rng.choice([1, 2])), int(rng.integers(1, 4))
    hw = (size // 4) ** 2
    guidance = rng.uniform(0.0, 1.0, (t, 4, size, size))
    latent = (t, 4, size // 4, size // 4)
    fs = make_flow_sample(rng.standard_normal(latent), rng.standard_normal(latent), float(rng.uniform(0.1, 0.9)))
    labels = rng.integers(0, 4, latent)
    rw = RegionWeights(labels)
    ref = rng.standard_normal((1, hw, c))
    txt = rng.standard_normal((1, l, c))
    obj = rng.standard_normal((1, hw, c))
    mask = rng.uniform(0.0, 1.0, (t, hw))
    w_in = rng.standard_normal((20, c)) / math.sqrt(20)
    w_out = rng.standard_normal((c, 4)) / math.sqrt(c)

    pose = PoseEncoderWeights.init(seed, sigma=0.3).named()
    block = {f"block.{k}": v for k, v in BlockWeights.init(c, heads, seed=seed, std=0.5).named().items()}
    groups = {**pose, **block}
    names = list(groups)
    shapes = [groups[n].shape for n in names]
    sizes = [int(np.prod(s)) for s in shapes]
    x0 = np.concatenate([groups[n].reshape(-1) for n in names])
    bcfg = BlockConfig(c=c, heads=heads, t=t, h=size // 4, w=size // 4, l=l)

    def unpack(x):
        out, off = {}, 0
        for n, shp, k in zip(names, shapes, sizes):
            out[n] = T.reshape(T.index(x, slice(off, off + k)), shp)
            off += k
        return out

    def f(x):
        p = unpack(x)
        pw = PoseEncoderWeights(p["pose.w1"], p["pose.b1"], p["pose.w2"], p["pose.b2"])
        feats = concat_with_noise(T.lift(fs.x_t), pose_encode(guidance, pw))
        tokens = T.reshape(T.transpose(feats, (0, 2, 3, 1)), (t, hw, 20))
        vid = T.matmul(tokens, w_in)
        bw = BlockWeights.zeros(c, heads).with_named({k[len("block."):]: v for k, v in p.items() if k.startswith("block.")})
        for layer in BlockWeights.LAYERS:
            getattr(bw, layer).heads = heads
        out = dit_block(StreamBundle(vid, ref, txt, obj, mask), bw, bcfg)
        v = T.transpose(T.reshape(T.matmul(out.vid, w_out), (t, size // 4, size // 4, 4)), (0, 3, 1, 2))
        return weighted_fm_loss(v, fs, rw)

    starts = np.cumsum([0] + sizes[:-1])
    coords = sorted({int(s + rng.integers(k)) for s, k in zip(starts, sizes)} |
                    {int(i) for i in rng.integers(0, x0.size, n_coords)})
    return f, x0, coords
