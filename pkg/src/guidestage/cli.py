"""``guidestage`` command line: compile-guidance, train-toy, sample, selfcheck.

Exit codes:

== =========================================
0  success
1  selfcheck found a failing invariant
2  unreadable or malformed input
3  no motion template fits the product
4  product mask empty or degenerate
5  training produced a non-finite loss
6  artifact shapes do not match the model
== =========================================

Every command writes ``run_manifest.json`` into its output directory. Set
``GUIDESTAGE_SEED`` to override the seed taken from flags or config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import templates as tpl
from .body import Camera
from .captions import MalformedCaption, encode_text, parse_caption
from .flow import PAPER_CFG_SCALE, NonFiniteError, chain_clips
from .geometry import EmptyOrDegenerate, read_pgm_mask
from .numerics.tensorio import TensorFormatError, atomic_write, load_tensor, save_tensor
from .raster import PoseEncoderWeights, frame_to_ppm, pose_encode, render_plan, rgb_to_ppm

EXIT_OK = 0
EXIT_SELFCHECK = 1
EXIT_PARSE = 2
EXIT_NO_TEMPLATE = 3
EXIT_DEGENERATE = 4
EXIT_NON_FINITE = 5
EXIT_SHAPE = 6

SEED_ENV = "GUIDESTAGE_SEED"
MANIFEST = "run_manifest.json"


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return int(default)
    try:
        return int(raw)
    except ValueError:
        raise CommandError(EXIT_PARSE, f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _write_manifest(out: Path, command: str, args: dict, seed, inputs: dict, outputs: list[str]) -> None:
    _write_json(
        out / MANIFEST,
        {
            "tool": "guidestage",
            "version": __version__,
            "command": command,
            "args": args,
            "seed": seed,
            "inputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in sorted(inputs.items())},
            "outputs": sorted(outputs),
        },
    )


def _read_json(path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(EXIT_PARSE, f"cannot read {what} {path}: {exc}") from None


# -- compile-guidance ------------------------------------------------------------

def cmd_compile_guidance(args) -> int:
    from . import toy

    out = Path(args.out)
    seed = _seed(args.seed)
    human_doc = _read_json(args.human, "human")
    try:
        human = tpl.HumanInput.from_json(human_doc)
        cam = Camera.from_json(human_doc["camera"]) if "camera" in human_doc else tpl.DEFAULT_CAMERA
    except (KeyError, TypeError, ValueError) as exc:
        raise CommandError(EXIT_PARSE, f"bad human file {args.human}: {exc}") from None
    try:
        pool = tpl.load_pool(args.pool)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CommandError(EXIT_PARSE, f"cannot load pool {args.pool}: {exc}") from None
    try:
        mask = read_pgm_mask(args.product_mask)
    except (OSError, ValueError) as exc:
        raise CommandError(EXIT_PARSE, f"cannot read mask {args.product_mask}: {exc}") from None
    try:
        caption_text = Path(args.caption).read_text(encoding="utf-8").strip().splitlines()[0]
        product, _ = parse_caption(caption_text)
    except (OSError, IndexError, UnicodeDecodeError) as exc:
        raise CommandError(EXIT_PARSE, f"cannot read caption {args.caption}: {exc}") from None
    except MalformedCaption as exc:
        raise CommandError(EXIT_PARSE, f"malformed caption {args.caption}: {exc}") from None
    if product.size_cm is None:
        raise CommandError(EXIT_PARSE, f"caption {args.caption} has no size_cm")
    try:
        spec = tpl.ProductSpec(size_cm=product.size_cm, mask=mask, caption=product)
        plan = tpl.compile_guidance(human, spec, pool, cam)
    except tpl.NoTemplate as exc:
        raise CommandError(EXIT_NO_TEMPLATE, f"no template: {exc}") from None
    except EmptyOrDegenerate as exc:
        raise CommandError(EXIT_DEGENERATE, f"degenerate product mask: {exc}") from None
    except ValueError as exc:
        raise CommandError(EXIT_PARSE, str(exc)) from None

    guidance = render_plan(plan, cam)
    encoded = pose_encode(guidance, PoseEncoderWeights.init(seed))
    vae = toy.PatchVAE()
    reference = vae.encode(toy.reference_image(plan, cam))
    product_lat = vae.encode(toy.product_image(mask, toy.color_rgb(product.color), cam.size))

    (out / "frames").mkdir(parents=True, exist_ok=True)
    written = []
    atomic_write(out / "plan.json", plan.dumps().encode())
    written.append("plan.json")
    for k, frame in enumerate(guidance):
        rel = f"frames/frame_{k:03d}.ppm"
        atomic_write(out / rel, frame_to_ppm(frame))
        written.append(rel)
    for name, arr in (("guidance.gst", guidance), ("encoded.gst", encoded), ("reference.gst", reference),
                      ("product.gst", product_lat)):
        save_tensor(out / name, arr)
        written.append(name)
    atomic_write(out / "caption.txt", (caption_text + "\n").encode())
    _write_json(out / "camera.json", cam.to_json())
    written += ["caption.txt", "camera.json"]
    _write_manifest(
        out, "compile-guidance",
        {"human": args.human, "product_mask": args.product_mask, "caption": args.caption, "pool": args.pool,
         "out": args.out},
        seed,
        {"human": args.human, "product_mask": args.product_mask, "caption": args.caption, "pool": args.pool},
        written,
    )
    print(f"plan: hold={plan.hold_id} head={plan.head_id} other={plan.other_hand_id} frames={plan.frame_count}")
    return EXIT_OK


# -- train-toy ---------------------------------------------------------------------

def cmd_train_toy(args) -> int:
    from . import toy

    out = Path(args.out)
    doc = _read_json(args.config, "config")
    try:
        cfg = toy.ToyConfig.from_json(doc)
    except (TypeError, ValueError, AttributeError) as exc:
        raise CommandError(EXIT_PARSE, f"bad config {args.config}: {exc}") from None
    if args.steps < 0:
        raise CommandError(EXIT_PARSE, "--steps must be >= 0")
    seed = _seed(cfg.sampler.seed)
    cfg = replace(cfg, sampler=replace(cfg.sampler, seed=seed))
    if args.no_object_attention:
        cfg = replace(cfg, object_attention=False)

    data = toy.make_dataset(cfg, seed)
    try:
        result = toy.train(cfg, args.steps, seed, data=data)
    except FloatingPointError as exc:
        raise CommandError(EXIT_NON_FINITE, str(exc)) from None

    out.mkdir(parents=True, exist_ok=True)
    written = toy.save_weights(out / "weights", result.params, cfg)
    written = [f"weights/{w}" for w in written]
    lines = ["step,loss"] + [f"{k},{v!r}" for k, v in enumerate(result.train_losses)]
    atomic_write(out / "loss.csv", ("\n".join(lines) + "\n").encode())
    lines = ["step,eval_loss"] + [f"{k},{v!r}" for k, v in result.eval_losses]
    atomic_write(out / "eval.csv", ("\n".join(lines) + "\n").encode())
    held = toy.held_out_sample(cfg)
    metrics = {
        "initial_eval_loss": result.initial_eval,
        "final_eval_loss": result.final_eval,
        "loss_ratio": result.final_eval / result.initial_eval,
        "masked_reconstruction_error": toy.masked_reconstruction_error(result.params, cfg, held, seed),
        "object_attention": cfg.object_attention,
        "steps": args.steps,
    }
    _write_json(out / "metrics.json", metrics)
    written += ["loss.csv", "eval.csv", "metrics.json"]
    _write_manifest(
        out, "train-toy",
        {"config": args.config, "steps": args.steps, "out": args.out, "no_object_attention": args.no_object_attention},
        seed, {"config": args.config}, written,
    )
    print(f"eval loss {metrics['initial_eval_loss']:.4f} -> {metrics['final_eval_loss']:.4f} "
          f"(ratio {metrics['loss_ratio']:.3f})")
    return EXIT_OK


# -- sample --------------------------------------------------------------------------

def cmd_sample(args) -> int:
    from . import toy

    out = Path(args.out)
    gdir = Path(args.guidance)
    try:
        params, cfg = toy.load_weights(args.weights)
    except (OSError, KeyError, json.JSONDecodeError, TensorFormatError) as exc:
        raise CommandError(EXIT_PARSE, f"cannot load weights {args.weights}: {exc}") from None
    except ValueError as exc:
        raise CommandError(EXIT_SHAPE, str(exc)) from None
    try:
        guidance = load_tensor(gdir / "guidance.gst")
        reference = load_tensor(gdir / "reference.gst")
        product = load_tensor(gdir / "product.gst")
        caption = (gdir / "caption.txt").read_text(encoding="utf-8").strip()
    except (OSError, TensorFormatError, UnicodeDecodeError) as exc:
        raise CommandError(EXIT_PARSE, f"cannot load guidance {gdir}: {exc}") from None
    lat = (toy.LATENT_C, cfg.latent, cfg.latent)
    if guidance.ndim != 4 or guidance.shape[1:] != (4, cfg.image, cfg.image):
        raise CommandError(EXIT_SHAPE, f"guidance {guidance.shape} does not fit a {cfg.image}px model")
    if reference.shape != lat or product.shape != lat:
        raise CommandError(EXIT_SHAPE, f"reference {reference.shape} / product {product.shape} must be {lat}")
    if args.clips < 1:
        raise CommandError(EXIT_PARSE, "--clips must be >= 1")

    seed = _seed(cfg.sampler.seed)
    sampler = replace(cfg.sampler, cfg_scale=args.cfg_scale, seed=seed)
    cfg = replace(cfg, sampler=sampler)
    cond = toy.Conditions(
        guidance=guidance,
        ref_latent=reference,
        obj_latent=product,
        text=encode_text(caption, cfg.c, cfg.l_max),
        labels=np.zeros((guidance.shape[0], cfg.latent, cfg.latent), dtype=int),
    )
    model = toy.ToyModel(params, cfg, cond)
    try:
        clips = chain_clips(model, guidance.shape[0], sampler, args.clips)
    except NonFiniteError as exc:
        raise CommandError(EXIT_NON_FINITE, str(exc)) from None

    vae = toy.PatchVAE()
    (out / "previews").mkdir(parents=True, exist_ok=True)
    written = []
    for k, clip in enumerate(clips):
        rel = f"clip_{k:03d}.gst"
        save_tensor(out / rel, clip)
        written.append(rel)
        for j, rgb in enumerate(vae.decode(clip)):
            rel = f"previews/clip_{k:03d}_frame_{j:03d}.ppm"
            atomic_write(out / rel, rgb_to_ppm(rgb))
            written.append(rel)
    wdir = Path(args.weights)
    inputs = {f"weights/{toy.WEIGHTS_INDEX}": wdir / toy.WEIGHTS_INDEX}
    inputs.update({f"weights/params/{p.name}": p for p in sorted((wdir / "params").glob("*.gst"))})
    inputs.update({f"guidance/{n}": gdir / n for n in ("guidance.gst", "reference.gst", "product.gst", "caption.txt")})
    _write_manifest(
        out, "sample",
        {"weights": args.weights, "guidance": args.guidance, "clips": args.clips, "cfg_scale": args.cfg_scale,
         "steps": sampler.steps, "clip_frames": sampler.clip_frames, "out": args.out},
        seed, inputs, written,
    )
    print(f"sampled {len(clips)} clip(s) of {sampler.clip_frames} frames, cfg scale {args.cfg_scale}")
    return EXIT_OK


# -- selfcheck -----------------------------------------------------------------------

def cmd_selfcheck(args) -> int:
    from .selfcheck import format_table, run_checks

    results = run_checks()
    print(format_table(results))
    failed = [r.name for r in results if not r.ok]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "selfcheck.json", [{"name": r.name, "ok": r.ok, "detail": r.detail} for r in results])
        _write_manifest(out, "selfcheck", {"out": args.out}, None, {}, ["selfcheck.json"])
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_SELFCHECK
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guidestage", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"guidestage {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile-guidance", help="match, retarget and rasterize motion guidance")
    c.add_argument("--human", required=True, help="human JSON: root, yaw, shape_scale, has_table, camera")
    c.add_argument("--product-mask", required=True, help="binary PGM (P5) product mask")
    c.add_argument("--caption", required=True, help="caption text file; first line is used")
    c.add_argument("--pool", required=True, help="motion template pool JSON")
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0, help="pose encoder init seed")
    c.set_defaults(func=cmd_compile_guidance)

    t = sub.add_parser("train-toy", help="train the one-block DiT on the synthetic task")
    t.add_argument("--config", required=True)
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--no-object-attention", action="store_true", help="train with object attention disabled")
    t.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("sample", help="chain CFG Euler clips from trained weights")
    s.add_argument("--weights", required=True, help="weights directory written by train-toy")
    s.add_argument("--guidance", required=True, help="output directory of compile-guidance")
    s.add_argument("--clips", type=int, default=1)
    s.add_argument("--cfg-scale", type=float, default=PAPER_CFG_SCALE)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    k = sub.add_parser("selfcheck", help="run the invariant suite and print a pass/fail table")
    k.add_argument("--out", default=None, help="optional directory for a JSON report")
    k.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"guidestage {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
