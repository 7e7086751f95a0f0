"""Linear-path flow matching: training targets, weighted loss, CFG Euler sampling
and sequential clip chaining.

Path: ``x_t = (1 - t) x0 + t x1`` with constant target velocity ``x1 - x0``;
t = 0 is noise and t = 1 is data.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .numerics import tape as T
from .numerics.tape import Var

PAPER_CFG_SCALE = 2.5
PAPER_CLIP_FRAMES = 65


class NonFiniteError(ArithmeticError):
    pass


class Region(enum.IntEnum):
    DEFAULT = 0
    FACE = 1
    HANDS = 2
    PRODUCT = 3


@dataclass(frozen=True)
class FlowSample:
    x0: np.ndarray
    x1: np.ndarray
    t: float
    x_t: np.ndarray
    v_target: np.ndarray


@dataclass(frozen=True)
class RegionWeights:
    """Per-region loss weights; ``labels`` holds a :class:`Region` code per latent cell."""

    labels: np.ndarray
    face: float = 2.0
    hands: float = 2.0
    product: float = 3.0
    default: float = 1.0

    def __post_init__(self):
        if min(self.face, self.hands, self.product, self.default) <= 0:
            raise ValueError("region weights must be positive")

    def weight_map(self) -> np.ndarray:
        table = np.array([self.default, self.face, self.hands, self.product])
        return table[np.asarray(self.labels, dtype=int)]

    def scaled(self, k: float) -> "RegionWeights":
        return RegionWeights(self.labels, self.face * k, self.hands * k, self.product * k, self.default * k)


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 10
    cfg_scale: float = PAPER_CFG_SCALE
    clip_frames: int = PAPER_CLIP_FRAMES
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.clip_frames < 1:
            raise ValueError("clip_frames must be >= 1")


def make_flow_sample(x0, x1, t: float) -> FlowSample:
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {x1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        x_t = x0.copy()
    elif t == 1.0:
        x_t = x1.copy()
    else:
        x_t = (1.0 - t) * x0 + t * x1
    return FlowSample(x0, x1, float(t), x_t, x1 - x0)


def weighted_fm_loss(v_pred, sample: FlowSample, rw: RegionWeights):
    """``sum(w * (v_pred - v_target)^2) / sum(w)``; a tape ``Var`` if ``v_pred`` is one."""
    if tuple(v_pred.shape) != sample.v_target.shape:
        raise ValueError(f"prediction {v_pred.shape} vs target {sample.v_target.shape}")
    wmap = np.broadcast_to(rw.weight_map(), sample.v_target.shape)
    if isinstance(v_pred, Var):
        err = T.square(T.sub(v_pred, sample.v_target))
        return T.scale(T.tsum(T.mul(err, wmap)), 1.0 / float(wmap.sum()))
    diff = np.asarray(v_pred) - sample.v_target
    return float(np.sum(wmap * diff * diff) / np.sum(wmap))


def cfg_combine(v_cond, v_uncond, s: float):
    v_cond = np.asarray(v_cond, dtype=np.float64)
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    if v_cond.shape != v_uncond.shape:
        raise ValueError(f"shape mismatch {v_cond.shape} vs {v_uncond.shape}")
    return v_uncond + s * (v_cond - v_uncond)


VelocityFn = Callable[[np.ndarray, float, bool], np.ndarray]


def euler_sample(velocity_fn: VelocityFn, x0, cfg: SamplerConfig, pin_first: np.ndarray | None = None) -> np.ndarray:
    """Integrate the guided velocity field from t=0 to t=1 with ``cfg.steps`` Euler steps.

    ``pin_first`` holds slice ``x[0]`` fixed at the given value throughout,
    which is how a carried-over boundary latent stays bit-exact.
    """
    x = np.array(x0, dtype=np.float64)
    if pin_first is not None:
        x[0] = pin_first
    dt = 1.0 / cfg.steps
    for k in range(cfg.steps):
        t = k / cfg.steps
        v = cfg_combine(velocity_fn(x, t, True), velocity_fn(x, t, False), cfg.cfg_scale)
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"velocity is not finite at step {k}")
        x = x + dt * v
        if pin_first is not None:
            x[0] = pin_first
    return x


class ClipModel(Protocol):
    def latent_shape(self, frames: int) -> tuple[int, ...]: ...

    def velocity(self, x: np.ndarray, t: float, conditioned: bool, frame_ids: Sequence[int]) -> np.ndarray: ...


def clip_frame_ids(clip: int, clip_frames: int, total: int) -> list[int]:
    """Guidance frame indices for a clip; consecutive clips share one boundary frame."""
    start = clip * (clip_frames - 1)
    return [(start + j) % total for j in range(clip_frames)]


def chain_clips(model: ClipModel, plan, cfg: SamplerConfig, n_clips: int) -> list[np.ndarray]:
    """Sample clips in sequence; each clip starts from the previous clip's last latent slice."""
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    total = plan.frame_count if hasattr(plan, "frame_count") else int(plan)
    rng = np.random.default_rng(cfg.seed)
    shape = model.latent_shape(cfg.clip_frames)
    clips: list[np.ndarray] = []
    carry = None
    for k in range(n_clips):
        x0 = rng.standard_normal(shape)
        ids = clip_frame_ids(k, cfg.clip_frames, total)

        def vel(x, t, cond, ids=ids):
            return model.velocity(x, t, cond, ids)

        clips.append(euler_sample(vel, x0, cfg, pin_first=carry))
        carry = clips[-1][-1].copy()
    return clips


def concat_clips(clips: Sequence[np.ndarray]) -> np.ndarray:
    """Join chained clips along time, counting each shared boundary slice once."""
    parts = [clips[0]] + [c[1:] for c in clips[1:]]
    return np.concatenate(parts, axis=0)
