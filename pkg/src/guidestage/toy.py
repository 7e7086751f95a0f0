"""Desk-scale end-to-end model: a synthetic "person holds a colored box" task,
a fixed patch autoencoder standing in for a VAE, and a one-block DiT trained
with the region-weighted flow-matching loss.

Shapes (defaults): video frames are 3 x 64 x 64, latents 4 x 16 x 16, and
each latent frame is cut into 4 x 4 patches, giving 16 tokens per frame.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import templates as tpl
from .attention import AttentionWeights, BlockConfig, BlockWeights, StreamBundle, dit_block
from .body import BONES, JOINT_INDEX, Camera, forward_kinematics, hand_anchor
from .captions import HumanCaption, ProductCaption, encode_text, serialize_caption
from .flow import FlowSample, Region, RegionWeights, SamplerConfig, euler_sample, make_flow_sample, weighted_fm_loss
from .geometry import Mask
from .numerics import tape as T
from .numerics.tensorio import atomic_write, load_tensor, save_tensor
from .numerics.tape import Var
from .raster import PoseEncoderWeights, concat_with_noise, pose_encode, rasterize_box, render_plan, segment_distance

LATENT_C = 4
VAE_FACTOR = 4
TOKEN_PATCH = 4
TIME_FEATURES = 7
LATENT_SCALE = 3.0
# Large enough that the two-hand template is chosen and the box spans several latent cells.
TOY_PRODUCT_CM = 35.0


class PatchVAE:
    """4x4 average pooling followed by a fixed seeded 3 -> 4 channel mix.

    Decoding applies the pseudo-inverse mix and nearest-neighbour upsampling.
    """

    def __init__(self, seed: int = 1234, scale: float = LATENT_SCALE):
        self.mix = scale * np.random.default_rng(seed).standard_normal((LATENT_C, 3)) / math.sqrt(3)
        self.unmix = np.linalg.pinv(self.mix)

    def encode(self, img: np.ndarray) -> np.ndarray:
        *lead, c, h, w = img.shape
        f = VAE_FACTOR
        pooled = img.reshape(*lead, c, h // f, f, w // f, f).mean(axis=(-3, -1))
        return np.einsum("oc,...chw->...ohw", self.mix, pooled)

    def decode(self, lat: np.ndarray) -> np.ndarray:
        rgb = np.einsum("co,...ohw->...chw", self.unmix, lat)
        return rgb.repeat(VAE_FACTOR, axis=-2).repeat(VAE_FACTOR, axis=-1)


@dataclass(frozen=True)
class ToyConfig:
    image: int = 64
    frames: int = 8
    c: int = 64
    heads: int = 4
    l_max: int = 8
    n_train: int = 24
    lr: float = 0.003
    cond_dropout: float = 0.1
    object_attention: bool = True
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(steps=10, clip_frames=8))
    face_weight: float = 2.0
    hands_weight: float = 2.0
    product_weight: float = 3.0

    @property
    def latent(self) -> int:
        return self.image // VAE_FACTOR

    @property
    def grid(self) -> int:
        return self.latent // TOKEN_PATCH

    @property
    def camera(self) -> Camera:
        s = self.image
        return Camera(focal=1.5 * s, principal=(s / 2, s / 2), size=(s, s))

    @classmethod
    def from_json(cls, d: dict) -> "ToyConfig":
        train = d.get("train", {})
        rw = d.get("region_weights", {})
        sampler = SamplerConfig(
            steps=int(d.get("steps", 10)),
            cfg_scale=float(d.get("cfg_scale", 2.5)),
            clip_frames=int(d.get("clip_frames", 8)),
            seed=int(d.get("seed", 0)),
        )
        kw = {k: train[k] for k in ("image", "c", "heads", "l_max", "n_train", "lr", "cond_dropout", "object_attention") if k in train}
        return cls(
            frames=sampler.clip_frames,
            sampler=sampler,
            face_weight=float(rw.get("face", 2.0)),
            hands_weight=float(rw.get("hands", 2.0)),
            product_weight=float(rw.get("product", 3.0)),
            **kw,
        )

    def to_json(self) -> dict:
        return {
            "steps": self.sampler.steps,
            "cfg_scale": self.sampler.cfg_scale,
            "clip_frames": self.sampler.clip_frames,
            "seed": self.sampler.seed,
            "region_weights": {"face": self.face_weight, "hands": self.hands_weight, "product": self.product_weight},
            "train": {
                "image": self.image,
                "c": self.c,
                "heads": self.heads,
                "l_max": self.l_max,
                "n_train": self.n_train,
                "lr": self.lr,
                "cond_dropout": self.cond_dropout,
                "object_attention": self.object_attention,
            },
        }


@dataclass
class Conditions:
    """Everything the model sees besides the noisy latent, for a whole guidance sequence."""

    guidance: np.ndarray  # [T, 4, H, W]
    ref_latent: np.ndarray  # [4, h, w]
    obj_latent: np.ndarray  # [4, h, w]
    text: np.ndarray  # [1, l, c]
    labels: np.ndarray  # [T, h, w] Region codes

    def window(self, ids) -> "Conditions":
        ids = list(ids)
        return replace(self, guidance=self.guidance[ids], labels=self.labels[ids])


@dataclass
class ToySample:
    cond: Conditions
    x1: np.ndarray  # [T, 4, h, w]
    frames: np.ndarray  # [T, 3, H, W]


# -- synthetic data ------------------------------------------------------------

TOY_CAPTION = serialize_caption(ProductCaption("box", color="varied", material="plastic"), HumanCaption("presenter", "studio", "soft"))


def _paint_person(joints, size, color) -> np.ndarray:
    w, h = size
    px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    hit = np.zeros((h, w), dtype=bool)
    for pa, pb in BONES:
        ia, ib = JOINT_INDEX[pa], JOINT_INDEX[pb]
        if joints.visible[ia] and joints.visible[ib]:
            hit |= segment_distance(px, py, joints.xy[ia], joints.xy[ib]) <= 2.0
    return hit


def region_labels(plan, cam: Camera, latent: int) -> np.ndarray:
    """Per-frame Region codes on the latent grid: product over hands over face."""
    f = cam.size[0] // latent
    out = np.zeros((plan.frame_count, latent, latent), dtype=int)
    cy, cx = np.meshgrid(np.arange(latent) + 0.5, np.arange(latent) + 0.5, indexing="ij")
    for k, (pose, box) in enumerate(zip(plan.poses, plan.boxes)):
        j = forward_kinematics(pose, cam)
        lab = out[k]
        if j.is_visible("head"):
            hx, hy = j["head"] / f
            lab[np.hypot(cx - hx, cy - hy) <= 1.5] = Region.FACE
        for side in ("Left", "Right"):
            try:
                ax, ay = hand_anchor(pose, side, cam) / f
            except ValueError:
                continue
            lab[np.hypot(cx - ax, cy - ay) <= 1.0] = Region.HANDS
        occ = rasterize_box(box, cam.size)[0].reshape(latent, f, latent, f).mean(axis=(1, 3))
        lab[occ > 0.5] = Region.PRODUCT
    return out


def make_toy_sample(rng: np.random.Generator, cfg: ToyConfig, vae: PatchVAE, pool=None) -> ToySample:
    cam = cfg.camera
    pool = pool if pool is not None else _toy_pool(cam)
    human = tpl.HumanInput(
        root=np.array([rng.uniform(-0.25, 0.25), rng.uniform(-0.05, 0.1), rng.uniform(3.0, 3.4)]),
        yaw=rng.uniform(-0.3, 0.3),
        shape_scale=rng.uniform(0.9, 1.1),
    )
    mw, mh = 10, int(rng.integers(10, 18))
    bits = np.zeros((32, 32), dtype=bool)
    bits[16 - mh // 2 : 16 - mh // 2 + mh, 16 - mw // 2 : 16 - mw // 2 + mw] = True
    spec = tpl.ProductSpec(size_cm=TOY_PRODUCT_CM, mask=Mask(bits))
    plan = tpl.compile_guidance(human, spec, pool, cam)
    start = int(rng.integers(0, plan.frame_count))
    ids = [(start + k) % plan.frame_count for k in range(cfg.frames)]
    plan = replace(plan, poses=tuple(plan.poses[i] for i in ids), boxes=tuple(plan.boxes[i] for i in ids))

    person = rng.uniform(0.3, 1.0, 3)
    product = rng.uniform(0.0, 1.0, 3)
    background = np.full(3, 0.1)
    s = cfg.image
    frames = np.empty((cfg.frames, 3, s, s))
    for k, (pose, box) in enumerate(zip(plan.poses, plan.boxes)):
        img = np.broadcast_to(background[:, None, None], (3, s, s)).copy()
        img[:, _paint_person(forward_kinematics(pose, cam), cam.size, person)] = person[:, None]
        img[:, rasterize_box(box, cam.size)[0] > 0] = product[:, None]
        frames[k] = img
    ref = np.broadcast_to(background[:, None, None], (3, s, s)).copy()
    ref[:, _paint_person(forward_kinematics(plan.poses[0], cam), cam.size, person)] = person[:, None]
    prod_img = np.broadcast_to(product[:, None, None], (3, s, s))

    cond = Conditions(
        guidance=render_plan(plan, cam),
        ref_latent=vae.encode(ref),
        obj_latent=vae.encode(prod_img),
        text=encode_text(TOY_CAPTION, cfg.c, cfg.l_max),
        labels=region_labels(plan, cam, cfg.latent),
    )
    return ToySample(cond, vae.encode(frames), frames)


_POOL_CACHE: list = []


def _toy_pool(cam: Camera):
    # The example pool is authored in the default 64 x 64 camera frame.
    if not _POOL_CACHE:
        _POOL_CACHE.append(tpl.build_example_pool())
    return _POOL_CACHE[0]


# -- model ---------------------------------------------------------------------

def init_params(cfg: ToyConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    c = cfg.c
    pdim = TOKEN_PATCH * TOKEN_PATCH

    def lin(n_in, n_out, gain=1.0):
        return gain * rng.standard_normal((n_in, n_out)) / math.sqrt(n_in)

    params = {
        "embed.vid.w": lin((LATENT_C + 16) * pdim, c),
        "embed.vid.b": np.zeros(c),
        "embed.ref.w": lin(LATENT_C * pdim, c),
        "embed.ref.b": np.zeros(c),
        "embed.obj.w": lin(LATENT_C * pdim, c),
        "embed.obj.b": np.zeros(c),
        "embed.txt.w": lin(c, c),
        "embed.txt.b": np.zeros(c),
        "embed.time.w": lin(TIME_FEATURES, c),
        "embed.time.b": np.zeros(c),
        "out.w": np.zeros((c, LATENT_C * pdim)),
        "out.skip": np.zeros((LATENT_C * pdim, LATENT_C * pdim)),
        "out.gate": np.zeros((TIME_FEATURES, 1)),
        "out.b": np.zeros(LATENT_C * pdim),
    }
    params.update(PoseEncoderWeights.init(int(rng.integers(2**31))).named())
    block = BlockWeights.init(c, cfg.heads, seed=int(rng.integers(2**31)), std=0.5 / math.sqrt(c))
    params.update({f"block.{k}": v for k, v in block.named().items()})
    return params


def time_features(t: float) -> np.ndarray:
    return np.array(
        [t, math.sin(math.pi * t), math.cos(math.pi * t), math.sin(2 * math.pi * t), math.cos(2 * math.pi * t),
         math.sin(4 * math.pi * t), math.cos(4 * math.pi * t)]
    )[None]


def _patchify(x, n_lead: int, grid: int):
    """[L, C, G*P, G*P] -> [L, G*G, C*P*P]."""
    lead, ch = x.shape[0], x.shape[1]
    p = TOKEN_PATCH
    x = T.reshape(x, (lead, ch, grid, p, grid, p))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    return T.reshape(x, (lead, grid * grid, ch * p * p))


def _unpatchify(x, lead: int, grid: int):
    p = TOKEN_PATCH
    x = T.reshape(x, (lead, grid, grid, LATENT_C, p, p))
    x = T.transpose(x, (0, 3, 1, 4, 2, 5))
    return T.reshape(x, (lead, LATENT_C, grid * p, grid * p))


def token_mask(guidance: np.ndarray, grid: int) -> np.ndarray:
    """Box occupancy averaged over each token's pixel footprint: [T, grid*grid]."""
    n, _, h, w = guidance.shape
    box = guidance[:, 3]
    return box.reshape(n, grid, h // grid, grid, w // grid).mean(axis=(2, 4)).reshape(n, grid * grid)


def forward(params: dict, cfg: ToyConfig, x_t, t: float, cond: Conditions, conditioned: bool = True,
            object_attention: bool | None = None):
    """Predict the velocity for ``x_t`` [T, 4, h, w]. Returns a Var."""
    n = x_t.shape[0]
    g = cfg.grid
    pose_w = PoseEncoderWeights(params["pose.w1"], params["pose.b1"], params["pose.w2"], params["pose.b2"])
    feats = pose_encode(T.lift(cond.guidance), pose_w)
    inp = concat_with_noise(T.lift(x_t), feats)
    vid = T.add(T.matmul(_patchify(inp, n, g), params["embed.vid.w"]), params["embed.vid.b"])
    temb = T.add(T.matmul(time_features(t), params["embed.time.w"]), params["embed.time.b"])
    vid = T.add(vid, T.reshape(temb, (1, 1, cfg.c)))

    keep = 1.0 if conditioned else 0.0
    ref_lat = cond.ref_latent[None] * keep
    obj_lat = cond.obj_latent[None] * keep
    ref = T.add(T.matmul(_patchify(ref_lat, 1, g), params["embed.ref.w"]), params["embed.ref.b"])
    obj = T.add(T.matmul(_patchify(obj_lat, 1, g), params["embed.obj.w"]), params["embed.obj.b"])
    txt = T.add(T.matmul(cond.text * keep, params["embed.txt.w"]), params["embed.txt.b"])

    bundle = StreamBundle(vid, ref, txt, obj, token_mask(cond.guidance, g))
    block = BlockWeights(
        *(
            AttentionWeights(**{n: params[f"block.{layer}.{n}"] for n in AttentionWeights.NAMES}, heads=cfg.heads)
            for layer in BlockWeights.LAYERS
        )
    )
    use_obj = cfg.object_attention if object_attention is None else object_attention
    bcfg = BlockConfig(c=cfg.c, heads=cfg.heads, t=n, h=g, w=g, l=cond.text.shape[1], object_attention=use_obj)
    out = dit_block(bundle, block, bcfg)
    vel = T.add(T.matmul(out.vid, params["out.w"]), params["out.b"])
    # Linear skip from the noisy latent: the target's x_t component needs no attention.
    vel = T.add(vel, T.matmul(_patchify(T.lift(x_t), n, g), params["out.skip"]))
    gate = T.reshape(T.matmul(time_features(t), params["out.gate"]), (1, 1, 1, 1))
    return T.add(_unpatchify(vel, n, g), T.mul(T.lift(x_t), gate))


def region_weights(cfg: ToyConfig, labels: np.ndarray) -> RegionWeights:
    lab = np.broadcast_to(labels[:, None], (labels.shape[0], LATENT_C) + labels.shape[1:])
    return RegionWeights(lab, cfg.face_weight, cfg.hands_weight, cfg.product_weight)


def loss_and_grads(params: dict, cfg: ToyConfig, sample: FlowSample, cond: Conditions, conditioned: bool = True):
    vars_ = {k: Var(v, requires_grad=True) for k, v in params.items()}
    v_pred = forward(vars_, cfg, sample.x_t, sample.t, cond, conditioned)
    loss = weighted_fm_loss(v_pred, sample, region_weights(cfg, cond.labels))
    T.backward(loss)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in vars_.items()}
    return float(loss.value), grads


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1**self.t)
            vh = self.v[k] / (1 - self.b2**self.t)
            out[k] = p - self.lr * mh / (np.sqrt(vh) + self.eps)
        return out


@dataclass
class TrainResult:
    params: dict
    train_losses: list[float]
    eval_losses: list[tuple[int, float]]

    @property
    def initial_eval(self) -> float:
        return self.eval_losses[0][1]

    @property
    def final_eval(self) -> float:
        return self.eval_losses[-1][1]


def make_dataset(cfg: ToyConfig, seed: int) -> list[ToySample]:
    rng = np.random.default_rng([seed, 1])
    vae = PatchVAE()
    return [make_toy_sample(rng, cfg, vae) for _ in range(cfg.n_train)]


def held_out_sample(cfg: ToyConfig) -> ToySample:
    return make_toy_sample(np.random.default_rng([987654321, 7]), cfg, PatchVAE())


def eval_batch(data: list[ToySample], seed: int, n: int = 6) -> list[tuple[int, FlowSample]]:
    rng = np.random.default_rng([seed, 2])
    out = []
    for i in range(n):
        s = data[i % len(data)]
        t = (i + 0.5) / n
        out.append((i % len(data), make_flow_sample(rng.standard_normal(s.x1.shape), s.x1, t)))
    return out


def eval_loss(params: dict, cfg: ToyConfig, data: list[ToySample], batch) -> float:
    total = 0.0
    for idx, fs in batch:
        cond = data[idx].cond
        v = forward(params, cfg, fs.x_t, fs.t, cond).value
        total += weighted_fm_loss(v, fs, region_weights(cfg, cond.labels))
    return total / len(batch)


def train(cfg: ToyConfig, steps: int, seed: int, data: list[ToySample] | None = None, eval_every: int = 10,
          on_step=None) -> TrainResult:
    """Adam on the region-weighted flow-matching loss, one clip per step."""
    data = data if data is not None else make_dataset(cfg, seed)
    params = init_params(cfg, seed)
    opt = Adam(params, cfg.lr)
    rng = np.random.default_rng([seed, 3])
    batch = eval_batch(data, seed)
    evals = [(0, eval_loss(params, cfg, data, batch))]
    losses: list[float] = []
    for step in range(steps):
        s = data[int(rng.integers(len(data)))]
        fs = make_flow_sample(rng.standard_normal(s.x1.shape), s.x1, float(rng.uniform(0.0, 1.0)))
        conditioned = bool(rng.uniform() >= cfg.cond_dropout)
        loss, grads = loss_and_grads(params, cfg, fs, s.cond, conditioned)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        losses.append(loss)
        params = opt.step(params, grads)
        if on_step is not None:
            on_step(step, loss)
        if (step + 1) % eval_every == 0 or step + 1 == steps:
            evals.append((step + 1, eval_loss(params, cfg, data, batch)))
    return TrainResult(params, losses, evals)


class ToyModel:
    """Adapter exposing a trained parameter set to :func:`guidestage.flow.chain_clips`."""

    def __init__(self, params: dict, cfg: ToyConfig, cond: Conditions, object_attention: bool | None = None):
        self.params, self.cfg, self.cond = params, cfg, cond
        self.object_attention = object_attention

    def latent_shape(self, frames: int) -> tuple[int, ...]:
        return (frames, LATENT_C, self.cfg.latent, self.cfg.latent)

    def velocity(self, x, t, conditioned, frame_ids):
        cond = self.cond.window(frame_ids)
        return forward(self.params, self.cfg, x, t, cond, conditioned, self.object_attention).value


RECON_TIMES = (0.1, 0.3, 0.5, 0.7, 0.9)


def masked_reconstruction_error(params: dict, cfg: ToyConfig, sample: ToySample, seed: int,
                                object_attention: bool | None = None) -> float:
    """Mean squared latent error on product cells of the one-step reconstruction
    ``x1_hat = x_t + (1 - t) v_cond``, averaged over a fixed grid of t and seeded noise."""
    rng = np.random.default_rng([seed, 4])
    sel = np.broadcast_to((sample.cond.labels == Region.PRODUCT)[:, None], sample.x1.shape)
    errs = []
    for t in RECON_TIMES:
        fs = make_flow_sample(rng.standard_normal(sample.x1.shape), sample.x1, t)
        v = forward(params, cfg, fs.x_t, t, sample.cond, True, object_attention).value
        x1_hat = fs.x_t + (1.0 - t) * v
        errs.append(np.mean((x1_hat[sel] - sample.x1[sel]) ** 2))
    return float(np.mean(errs))


def sample_clip(params: dict, cfg: ToyConfig, cond: Conditions, seed: int) -> np.ndarray:
    """Full CFG Euler sample of one clip from seeded noise."""
    model = ToyModel(params, cfg, cond)
    n = cond.guidance.shape[0]
    ids = list(range(n))
    x0 = np.random.default_rng(seed).standard_normal(model.latent_shape(n))
    return euler_sample(lambda x, t, c: model.velocity(x, t, c, ids), x0, cfg.sampler)


# -- conditioning images for arbitrary plans ------------------------------------

NAMED_COLORS = {
    "black": (0.05, 0.05, 0.05), "white": (0.95, 0.95, 0.95), "gray": (0.5, 0.5, 0.5), "grey": (0.5, 0.5, 0.5),
    "red": (0.85, 0.1, 0.1), "green": (0.1, 0.7, 0.2), "blue": (0.1, 0.25, 0.85), "yellow": (0.95, 0.85, 0.1),
    "orange": (0.95, 0.55, 0.1), "purple": (0.55, 0.2, 0.7), "pink": (0.95, 0.6, 0.75), "brown": (0.5, 0.3, 0.15),
}
PERSON_RGB = (0.8, 0.65, 0.55)
BACKGROUND_RGB = (0.1, 0.1, 0.1)


def color_rgb(name: str) -> np.ndarray:
    """First recognised color word in ``name``; unknown names get a stable hashed color."""
    for word in name.lower().replace("-", " ").split():
        if word in NAMED_COLORS:
            return np.array(NAMED_COLORS[word])
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=3).digest()
    return np.frombuffer(digest, dtype=np.uint8).astype(np.float64) / 255.0


def reference_image(plan, cam: Camera, rgb=PERSON_RGB) -> np.ndarray:
    w, h = cam.size
    img = np.broadcast_to(np.asarray(BACKGROUND_RGB)[:, None, None], (3, h, w)).copy()
    img[:, _paint_person(forward_kinematics(plan.poses[0], cam), cam.size, rgb)] = np.asarray(rgb)[:, None]
    return img


def product_image(mask: Mask, rgb, size: tuple[int, int]) -> np.ndarray:
    """Product color inside the mask, nearest-neighbour resampled to ``size`` (w, h)."""
    w, h = size
    rows = ((np.arange(h) + 0.5) * mask.h / h).astype(int)
    cols = ((np.arange(w) + 0.5) * mask.w / w).astype(int)
    bits = mask.bits[np.ix_(rows, cols)]
    img = np.broadcast_to(np.asarray(BACKGROUND_RGB)[:, None, None], (3, h, w)).copy()
    img[:, bits] = np.asarray(rgb)[:, None]
    return img


# -- weight files ----------------------------------------------------------------

WEIGHTS_INDEX = "weights.json"


def save_weights(out_dir, params: dict, cfg: ToyConfig) -> list[str]:
    """One tensor file per parameter plus a JSON index; returns the written file names."""
    out = Path(out_dir)
    (out / "params").mkdir(parents=True, exist_ok=True)
    names = sorted(params)
    files = []
    for name in names:
        rel = f"params/{name}.gst"
        save_tensor(out / rel, params[name])
        files.append(rel)
    index = {"format": 1, "config": cfg.to_json(), "params": {n: f for n, f in zip(names, files)}}
    atomic_write(out / WEIGHTS_INDEX, (json.dumps(index, indent=2, sort_keys=True) + "\n").encode())
    return files + [WEIGHTS_INDEX]


def load_weights(in_dir) -> tuple[dict, ToyConfig]:
    src = Path(in_dir)
    index = json.loads((src / WEIGHTS_INDEX).read_text(encoding="utf-8"))
    cfg = ToyConfig.from_json(index["config"])
    params = {n: load_tensor(src / f) for n, f in index["params"].items()}
    expected = init_params(cfg, 0)
    for n, v in expected.items():
        if n not in params or params[n].shape != v.shape:
            got = params[n].shape if n in params else None
            raise ValueError(f"parameter {n}: expected shape {v.shape}, got {got}")
    return params, cfg
