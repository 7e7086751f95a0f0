"""Invariant suite behind ``guidestage selfcheck``.

Each check compares a production path with an independent oracle or an
exact contract, on small seeded inputs, and reports pass/fail with a short
detail string. The whole suite runs in a few seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import oracles
from .attention import (
    AttentionWeights,
    BlockConfig,
    BlockWeights,
    dit_block,
    full_attention,
    object_attention,
    reference_attention,
)
from .body import Identity, retarget
from .captions import HumanCaption, ProductCaption, parse_caption, serialize_caption
from .flow import SamplerConfig, chain_clips, euler_sample
from .geometry import min_rotated_rect, rect_iou
from .numerics.tape import grad_check
from .numerics.tensorio import tensor_from_bytes, tensor_to_bytes
from .templates import NoTemplate, ProductSpec, build_example_pool, match_template
from .testing import make_grad_problem, random_bundle, random_convex_mask, random_pool, random_rect, random_small_dims


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _attention_case(rng):
    d = random_small_dims(rng)
    b = random_bundle(rng, d["t"], d["h"] * d["w"], d["l"], d["c"])
    w = AttentionWeights.init(d["c"], d["heads"], rng)
    return b, w


def check_full_attention(n=8) -> tuple[bool, str]:
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(n):
        b, w = _attention_case(rng)
        got = full_attention(b, w)
        exp = oracles.full_attention_oracle(b, w)
        worst = max(worst, *(float(np.max(np.abs(g - e))) for g, e in zip((got.vid, got.ref, got.txt), exp)))
    return worst < 1e-9, f"max |diff| {worst:.2e}"


def check_reference_attention(n=8) -> tuple[bool, str]:
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(n):
        b, w = _attention_case(rng)
        got = reference_attention(b, w)
        exp = oracles.reference_attention_oracle(b, w)
        worst = max(worst, *(float(np.max(np.abs(g - e))) for g, e in zip((got.vid, got.ref, got.txt), exp)))
    return worst < 1e-9, f"max |diff| {worst:.2e}"


def check_object_attention(n=8) -> tuple[bool, str]:
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(n):
        b, w = _attention_case(rng)
        worst = max(worst, float(np.max(np.abs(object_attention(b, w).vid - oracles.object_attention_oracle(b, w)))))
    return worst < 1e-9, f"max |diff| {worst:.2e}"


def check_routing_isolation(n=20) -> tuple[bool, str]:
    rng = np.random.default_rng(104)
    for i in range(n):
        b, w = _attention_case(rng)
        moved = replace(b, vid=b.vid + rng.standard_normal(b.vid.shape))
        if not np.array_equal(reference_attention(b, w).ref, reference_attention(moved, w).ref):
            return False, f"ref output moved with vid in trial {i}"
    return True, f"{n} trials bit-identical"


def check_object_contract() -> tuple[bool, str]:
    rng = np.random.default_rng(105)
    d = random_small_dims(rng)
    b = random_bundle(rng, d["t"], d["h"] * d["w"], d["l"], d["c"], mask="zero")
    w = AttentionWeights.init(d["c"], d["heads"], rng)
    if not np.array_equal(object_attention(b, w).vid, b.vid):
        return False, "zero mask changed vid"
    cfg = BlockConfig(c=d["c"], heads=d["heads"], t=d["t"], h=d["h"], w=d["w"], l=d["l"])
    cur = random_bundle(rng, d["t"], d["h"] * d["w"], d["l"], d["c"])
    obj0 = cur.obj.copy()
    for k in range(10):
        cur = dit_block(cur, BlockWeights.init(d["c"], d["heads"], seed=k), cfg)
    if not np.array_equal(cur.obj, obj0):
        return False, "obj stream changed across blocks"
    return True, "zero mask is identity; obj unchanged over 10 blocks"


def check_gradients(n=3) -> tuple[bool, str]:
    worst = 0.0
    for seed in range(n):
        f, x0, coords = make_grad_problem(seed, n_coords=8)
        worst = max(worst, grad_check(f, x0, 1e-6, coords))
    return worst < 1e-4, f"max rel err {worst:.2e}"


def check_min_rect(n=10) -> tuple[bool, str]:
    rng = np.random.default_rng(106)
    worst = 0.0
    for _ in range(n):
        m = random_convex_mask(rng, 32)
        r = min_rotated_rect(m)
        sweep = oracles.min_rect_area_sweep(m.pixel_centers())
        worst = max(worst, abs(r.area - sweep) / sweep)
        if not r.contains(m.pixel_centers(), slack=1e-9).all():
            return False, "a set pixel center lies outside the rectangle"
    return worst < 0.01, f"max relative area difference from sweep {worst:.2e}"


def check_iou(n=10) -> tuple[bool, str]:
    rng = np.random.default_rng(107)
    worst = 0.0
    for _ in range(n):
        a, b = random_rect(rng), random_rect(rng)
        worst = max(worst, abs(rect_iou(a, b) - oracles.iou_raster(a, b, 256)))
    return worst < 0.02, f"max |IoU - raster| {worst:.1e}"


def check_template_match(n=40) -> tuple[bool, str]:
    rng = np.random.default_rng(108)
    from .body import Orientation

    for i in range(n):
        pool = random_pool(rng, int(rng.integers(1, 12)))
        size = float(rng.uniform(1, 40))
        orient = list(Orientation)[int(rng.integers(4))]
        table = bool(rng.integers(2))
        try:
            got = match_template(pool, ProductSpec(size_cm=size), orient, table)
        except NoTemplate:
            got = None
        if got != oracles.brute_force_match(pool, size, orient, table):
            return False, f"pool {i}: matcher and brute force disagree"
    return True, f"{n} random pools agree"


def check_euler() -> tuple[bool, str]:
    rng = np.random.default_rng(109)
    x0, x1 = rng.standard_normal(6), rng.standard_normal(6)
    for steps in (1, 3, 10):
        x = euler_sample(lambda x, t, c: x1 - x0, x0, SamplerConfig(steps=steps))
        if np.max(np.abs(x - x1)) > 1e-12:
            return False, f"constant field missed x1 at {steps} steps"
    errs = [np.max(np.abs(euler_sample(lambda x, t, c: -x, x0, SamplerConfig(steps=s)) - math.exp(-1) * x0))
            for s in (20, 40)]
    ratio = errs[0] / errs[1]
    return 1.8 < ratio < 2.2, f"exact on constant fields; error ratio on v=-x {ratio:.3f}"


class _RandomField:
    def latent_shape(self, frames):
        return (frames, 2, 2)

    def velocity(self, x, t, cond, ids):
        return np.sin(x + t) * (1.0 if cond else 0.5) + np.asarray(ids, dtype=float)[:, None, None]


def check_chaining() -> tuple[bool, str]:
    clips = chain_clips(_RandomField(), 20, SamplerConfig(steps=4, clip_frames=5, seed=3), 3)
    for a, b in zip(clips, clips[1:]):
        if not np.array_equal(a[-1], b[0]):
            return False, "boundary slices differ"
    return True, "3 clips, boundaries bit-equal"


def check_retarget_identity() -> tuple[bool, str]:
    tmpl = build_example_pool()[1]
    first = tmpl.frames[0]
    out = retarget(list(tmpl.frames), Identity(first.root, first.yaw, first.shape_scale))
    worst = max(float(np.max(np.abs(a.root - b.root))) for a, b in zip(out, tmpl.frames))
    return worst < 1e-12, f"max root drift {worst:.1e}"


def check_caption_roundtrip() -> tuple[bool, str]:
    p = ProductCaption("bottle", color="green", material="glass", size_cm=22.0, text_on_product="AQUA")
    h = HumanCaption("young woman", "kitchen", "daylight")
    s = serialize_caption(p, h)
    return parse_caption(s) == (p, h) and serialize_caption(*parse_caption(s)) == s, "serialize/parse fixed point"


def check_tensor_io() -> tuple[bool, str]:
    arr = np.arange(24, dtype=np.float64).reshape(2, 3, 4) / 7.0
    back = tensor_from_bytes(tensor_to_bytes(arr))
    ok = back.shape == arr.shape and np.array_equal(back, arr.astype(np.float32).astype(np.float64))
    return ok, "float32 round trip"


CHECKS: tuple[tuple[str, Callable[[], tuple[bool, str]]], ...] = (
    ("tensor_io_roundtrip", check_tensor_io),
    ("full_attention_oracle", check_full_attention),
    ("reference_attention_oracle", check_reference_attention),
    ("object_attention_oracle", check_object_attention),
    ("reference_routing_isolation", check_routing_isolation),
    ("object_attention_contract", check_object_contract),
    ("gradient_fidelity", check_gradients),
    ("min_rotated_rect_sweep", check_min_rect),
    ("rect_iou_raster", check_iou),
    ("template_match_bruteforce", check_template_match),
    ("retarget_identity", check_retarget_identity),
    ("euler_sampler", check_euler),
    ("clip_chaining", check_chaining),
    ("caption_roundtrip", check_caption_roundtrip),
)


def run_checks() -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure of that invariant
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  detail", f"{'-' * width}  ------  ------"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.ok else 'FAIL':<6}  {r.detail}")
    passed = sum(r.ok for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)
