"""Slow reference computations used to cross-check the fast paths.

Everything here is written independently of the production code: explicit
loops, exhaustive sweeps and rasterisation. Shared by the test-suite and
``guidestage selfcheck``.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_loops(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def _proj(x, wmat, bias):
    return [[sum(x[i][p] * wmat[p][j] for p in range(len(wmat))) + bias[j] for j in range(len(bias))] for i in range(len(x))]


def dense_attention(q_tokens, kv_tokens, w) -> np.ndarray:
    """Multi-head attention for one query set, token by token and head by head."""
    wq, bq, wk, bk, wv, bv, wo, bo = (np.asarray(getattr(w, n)).tolist() for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"))
    q = _proj(np.asarray(q_tokens).tolist(), wq, bq)
    k = _proj(np.asarray(kv_tokens).tolist(), wk, bk)
    v = _proj(np.asarray(kv_tokens).tolist(), wv, bv)
    c = len(bq)
    dh = c // w.heads
    concat = []
    for qi in q:
        row = []
        for h in range(w.heads):
            sl = range(h * dh, (h + 1) * dh)
            scores = [sum(qi[d] * kj[d] for d in sl) / math.sqrt(dh) for kj in k]
            top = max(scores)
            ex = [math.exp(s - top) for s in scores]
            z = sum(ex)
            for d in sl:
                row.append(sum(e * vj[d] for e, vj in zip(ex, v)) / z)
        concat.append(row)
    return np.array(_proj(concat, wo, bo))


def full_attention_oracle(b, w):
    t, hw, c = b.vid.shape
    tokens = np.concatenate([b.vid.reshape(-1, c), b.ref.reshape(-1, c), b.txt.reshape(-1, c)])
    out = dense_attention(tokens, tokens, w)
    n = t * hw
    return out[:n].reshape(b.vid.shape), out[n : n + hw].reshape(b.ref.shape), out[n + hw :].reshape(b.txt.shape)


def reference_attention_oracle(b, w):
    t, hw, c = b.vid.shape
    ref, txt = b.ref[0], b.txt[0]
    vid = np.stack([dense_attention(b.vid[i], np.concatenate([b.vid[i], ref, txt]), w) for i in range(t)])
    ref_out = dense_attention(ref, np.concatenate([ref, txt]), w)[None]
    txt_out = dense_attention(txt, np.concatenate([b.vid.reshape(-1, c), txt]), w)[None]
    return vid, ref_out, txt_out


def object_attention_oracle(b, w):
    """Self-attention over [frame tokens, obj tokens]; keep the frame outputs, mask, add back."""
    t, hw, c = b.vid.shape
    out = np.empty_like(b.vid)
    for i in range(t):
        tokens = np.concatenate([b.vid[i], b.obj[0]])
        full = dense_attention(tokens, tokens, w)
        out[i] = b.vid[i] + b.mask[i][:, None] * full[:hw]
    return out


def min_rect_area_sweep(points, step_deg: float = 0.1) -> float:
    pts = np.asarray(points, dtype=float)
    best = math.inf
    for a in np.arange(0.0, 90.0, step_deg):
        r = math.radians(a)
        u = pts @ np.array([math.cos(r), math.sin(r)])
        v = pts @ np.array([-math.sin(r), math.cos(r)])
        best = min(best, (u.max() - u.min()) * (v.max() - v.min()))
    return best


def iou_raster(a, b, res: int = 512) -> float:
    """IoU by sampling both rectangles on a res x res grid spanning their joint bounds."""
    corners = np.vstack([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    xs = lo[0] + (np.arange(res) + 0.5) * (hi[0] - lo[0]) / res
    ys = lo[1] + (np.arange(res) + 0.5) * (hi[1] - lo[1]) / res
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    ina, inb = a.contains(pts), b.contains(pts)
    union = np.count_nonzero(ina | inb)
    return np.count_nonzero(ina & inb) / union if union else 0.0


def brute_force_match(pool, size_cm, orient, needs_table):
    """Score every template; infeasible ones score infinity."""
    scored = []
    for t in pool:
        lo, hi = t.size_range_cm
        feasible = (
            t.holding_hand.value != "None"
            and lo <= size_cm <= hi
            and t.orientation.value == getattr(orient, "value", orient)
            and t.requires_table == needs_table
        )
        scored.append((hi - lo if feasible else math.inf, t.id))
    scored.sort()
    if not scored or scored[0][0] == math.inf:
        return None
    return scored[0][1]
