"""Stream-routed attention for the conditioning DiT block.

Streams (c channels each):

* ``vid``  [t, h*w, c]  noisy video tokens, updated by every layer
* ``ref``  [1, h*w, c]  reference-image tokens
* ``txt``  [1, l, c]    caption tokens
* ``obj``  [1, h*w, c]  product latent tokens, never updated
* ``mask`` [t, h*w]     product-region weights in [0, 1]

Routing (query stream <- key/value streams):

=============  ==========================  ======================  =============================
layer          vid                         ref                     txt
=============  ==========================  ======================  =============================
full           all tokens                  all tokens              all tokens
reference      own frame + ref + txt       ref + txt               all vid frames + txt
object         own frame + obj (masked)    unchanged               unchanged
=============  ==========================  ======================  =============================

All functions accept plain arrays or tape ``Var`` values; they return
arrays unless a ``Var`` went in.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from .numerics import tape as T
from .numerics.tape import Var

FAULT_ENV = "GUIDESTAGE_FAULT"


def _fault(name: str) -> bool:
    return name in os.environ.get(FAULT_ENV, "").split(",")


@dataclass(frozen=True)
class StreamBundle:
    vid: object
    ref: object
    txt: object
    obj: object
    mask: object

    def __post_init__(self):
        t, hw, c = self.vid.shape
        if self.ref.shape != (1, hw, c):
            raise ValueError(f"ref stream {self.ref.shape} does not match vid {self.vid.shape}")
        if len(self.txt.shape) != 3 or self.txt.shape[0] != 1 or self.txt.shape[2] != c:
            raise ValueError(f"txt stream {self.txt.shape} must be [1, l, {c}]")
        if self.obj.shape != (1, hw, c):
            raise ValueError(f"obj stream {self.obj.shape} does not match vid {self.vid.shape}")
        if self.mask.shape != (t, hw):
            raise ValueError(f"mask {self.mask.shape} must be [{t}, {hw}]")

    @property
    def taped(self) -> bool:
        return any(isinstance(getattr(self, f.name), Var) for f in fields(self))

    def values(self) -> "StreamBundle":
        return StreamBundle(*(T.value_of(getattr(self, f.name)) for f in fields(self)))


@dataclass(frozen=True)
class BlockConfig:
    c: int
    heads: int = 1
    t: int = 1
    h: int = 1
    w: int = 1
    l: int = 1
    object_attention: bool = True

    def __post_init__(self):
        if min(self.c, self.heads, self.t, self.h, self.w, self.l) < 1:
            raise ValueError("block dimensions must be positive")
        if self.c % self.heads:
            raise ValueError(f"channels {self.c} not divisible by {self.heads} heads")


@dataclass
class AttentionWeights:
    wq: object
    bq: object
    wk: object
    bk: object
    wv: object
    bv: object
    wo: object
    bo: object
    heads: int = 1

    NAMES = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")

    @classmethod
    def init(cls, c: int, heads: int = 1, rng: np.random.Generator | None = None, std: float | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        std = 1.0 / math.sqrt(c) if std is None else std
        mats = [std * rng.standard_normal((c, c)) for _ in range(4)]
        return cls(mats[0], np.zeros(c), mats[1], np.zeros(c), mats[2], np.zeros(c), mats[3], np.zeros(c), heads)

    @classmethod
    def zeros(cls, c: int, heads: int = 1):
        z = np.zeros((c, c))
        return cls(z, np.zeros(c), z, np.zeros(c), z, np.zeros(c), z, np.zeros(c), heads)

    @classmethod
    def identity(cls, c: int, heads: int = 1):
        e = np.eye(c)
        return cls(e, np.zeros(c), e, np.zeros(c), e, np.zeros(c), e, np.zeros(c), heads)

    def params(self) -> dict:
        return {n: getattr(self, n) for n in self.NAMES}

    def with_params(self, params: dict) -> "AttentionWeights":
        return replace(self, **params)


@dataclass
class BlockWeights:
    full: AttentionWeights
    ref: AttentionWeights
    obj: AttentionWeights

    LAYERS = ("full", "ref", "obj")

    @classmethod
    def init(cls, c: int, heads: int = 1, seed: int = 0, std: float | None = None):
        rng = np.random.default_rng(seed)
        return cls(*(AttentionWeights.init(c, heads, rng, std) for _ in cls.LAYERS))

    @classmethod
    def zeros(cls, c: int, heads: int = 1):
        return cls(*(AttentionWeights.zeros(c, heads) for _ in cls.LAYERS))

    def named(self) -> dict:
        return {f"{layer}.{n}": v for layer in self.LAYERS for n, v in getattr(self, layer).params().items()}

    def with_named(self, named: dict) -> "BlockWeights":
        parts = {}
        for layer in self.LAYERS:
            aw = getattr(self, layer)
            parts[layer] = aw.with_params({n: named.get(f"{layer}.{n}", v) for n, v in aw.params().items()})
        return BlockWeights(**parts)


def _finish(x, taped: bool):
    return x if taped else T.value_of(x)


def multi_head_attention(xq, xkv, w: AttentionWeights):
    """Scaled dot-product attention with separate query and key/value token sets.

    ``xq`` is [B, nq, c] and ``xkv`` is [B, nk, c]; returns a ``Var`` [B, nq, c].
    """
    b, nq, c = xq.shape
    nk = xkv.shape[1]
    heads = w.heads
    dh = c // heads
    q = T.add(T.matmul(xq, w.wq), w.bq)
    k = T.add(T.matmul(xkv, w.wk), w.bk)
    v = T.add(T.matmul(xkv, w.wv), w.bv)
    q = T.transpose(T.reshape(q, (b, nq, heads, dh)), (0, 2, 1, 3))
    k = T.transpose(T.reshape(k, (b, nk, heads, dh)), (0, 2, 3, 1))
    v = T.transpose(T.reshape(v, (b, nk, heads, dh)), (0, 2, 1, 3))
    p = T.softmax(T.matmul(q, k), 1.0 / math.sqrt(dh))
    o = T.reshape(T.transpose(T.matmul(p, v), (0, 2, 1, 3)), (b, nq, c))
    return T.add(T.matmul(o, w.wo), w.bo)


def full_attention(b: StreamBundle, w: AttentionWeights) -> StreamBundle:
    """Joint self-attention over every vid, ref and txt token."""
    t, hw, c = b.vid.shape
    l = b.txt.shape[1]
    tokens = T.concat(
        [T.reshape(b.vid, (t * hw, c)), T.reshape(b.ref, (hw, c)), T.reshape(b.txt, (l, c))], axis=0
    )
    tokens = T.reshape(tokens, (1, -1, c))
    out = T.reshape(multi_head_attention(tokens, tokens, w), (-1, c))
    n_vid = t * hw
    vid = T.reshape(T.index(out, slice(0, n_vid)), (t, hw, c))
    ref = T.reshape(T.index(out, slice(n_vid, n_vid + hw)), (1, hw, c))
    txt = T.reshape(T.index(out, slice(n_vid + hw, n_vid + hw + l)), (1, l, c))
    taped = b.taped or _weights_taped(w)
    return replace(b, vid=_finish(vid, taped), ref=_finish(ref, taped), txt=_finish(txt, taped))


def reference_attention(b: StreamBundle, w: AttentionWeights) -> StreamBundle:
    """Per-frame attention: vid sees its frame + ref + txt, ref sees ref + txt, txt sees all vid + txt."""
    t, hw, c = b.vid.shape
    l = b.txt.shape[1]
    vid_kv = T.concat([b.vid, T.broadcast_to(b.ref, (t, hw, c)), T.broadcast_to(b.txt, (t, l, c))], axis=1)
    vid = multi_head_attention(b.vid, vid_kv, w)
    ref = multi_head_attention(b.ref, T.concat([b.ref, b.txt], axis=1), w)
    txt = multi_head_attention(b.txt, T.concat([T.reshape(b.vid, (1, t * hw, c)), b.txt], axis=1), w)
    taped = b.taped or _weights_taped(w)
    return replace(b, vid=_finish(vid, taped), ref=_finish(ref, taped), txt=_finish(txt, taped))


def object_update(b: StreamBundle, w: AttentionWeights):
    """The masked residual ``mask * U``, where U is the vid-token output of
    self-attention over each frame's vid tokens joined with the obj tokens."""
    t, hw, c = b.vid.shape
    kv = T.concat([b.vid, T.broadcast_to(b.obj, (t, hw, c))], axis=1)
    u = multi_head_attention(b.vid, kv, w)
    mask = b.mask
    if _fault("invert_object_mask"):
        mask = T.sub(1.0, mask)
    return T.mul(u, T.reshape(mask, (t, hw, 1)))


def object_attention(b: StreamBundle, w: AttentionWeights) -> StreamBundle:
    vid = T.add(b.vid, object_update(b, w))
    taped = b.taped or _weights_taped(w)
    return replace(b, vid=_finish(vid, taped))


def _weights_taped(w) -> bool:
    return any(isinstance(v, Var) for v in w.params().values())


def _norm(b: StreamBundle) -> StreamBundle:
    return StreamBundle(T.layer_norm(b.vid), T.layer_norm(b.ref), T.layer_norm(b.txt), T.layer_norm(b.obj), b.mask)


def dit_block(b: StreamBundle, w: BlockWeights, cfg: BlockConfig) -> StreamBundle:
    """full -> reference -> object attention, each pre-normalised with a residual add.

    ``obj`` and ``mask`` pass through untouched.
    """
    if b.vid.shape[2] != cfg.c:
        raise ValueError(f"bundle width {b.vid.shape[2]} differs from config c={cfg.c}")
    taped = b.taped or any(_weights_taped(getattr(w, n)) for n in BlockWeights.LAYERS)
    cur = b
    for fn, aw in ((full_attention, w.full), (reference_attention, w.ref)):
        upd = fn(_norm(cur), aw)
        cur = replace(cur, vid=T.add(cur.vid, upd.vid), ref=T.add(cur.ref, upd.ref), txt=T.add(cur.txt, upd.txt))
    if cfg.object_attention:
        cur = replace(cur, vid=T.add(cur.vid, object_update(_norm(cur), w.obj)))
    return replace(
        cur,
        vid=_finish(cur.vid, taped),
        ref=_finish(cur.ref, taped),
        txt=_finish(cur.txt, taped),
        obj=b.obj,
        mask=b.mask,
    )
