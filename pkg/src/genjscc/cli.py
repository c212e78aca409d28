"""Command-line entry points: train, eval, transmit, sweep, serve.

Every command takes a YAML config and/or flags; precondition violations exit
nonzero with the offending detail on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .config import (
    ChannelConfig,
    ConfigError,
    LossWeights,
    TrainingSchedule,
    load_config_file,
    model_preset,
    rate_preset,
    srem_preset,
)
from .data import (
    ImageFolderDataset,
    load_image,
    save_image,
    synthetic_scene_dataset,
    synthetic_texture_dataset,
)
from .metrics import dp_sweep, psnr
from .pipeline import (
    ContentPipeline,
    DistortionPerceptionPipeline,
    TransmissionModel,
    load_checkpoint,
)
from .srem import load_realism_map
from .training import Trainer


def _build_dataset(spec: dict | None, mode: str, seed: int):
    spec = spec or {}
    kind = spec.get("kind", "synthetic")
    size = int(spec.get("size", 64))
    count = int(spec.get("count", 64))
    if kind in ("synthetic", "synthetic_textures") and mode == "dpct":
        return synthetic_texture_dataset(count, size, seed=seed)
    if kind in ("synthetic", "synthetic_scenes") and mode == "cct":
        return synthetic_scene_dataset(count, size, seed=seed)
    if kind == "folder":
        if mode != "dpct":
            raise ConfigError("folder datasets provide no label maps; use synthetic_scenes for cct")
        return ImageFolderDataset(spec["path"], crop=int(spec.get("crop", size)), seed=seed)
    raise ConfigError(f"unknown dataset kind {kind!r} for mode {mode!r}")


def cmd_train(args) -> int:
    cfg = load_config_file(args.config)
    mode = cfg["mode"]
    preset = cfg.get("preset") or "toy"
    model_cfg = cfg.get("model") or model_preset(preset)
    rate_cfg = cfg.get("rate") or rate_preset(preset)
    srem_cfg = cfg.get("srem") or srem_preset(preset)
    weights = cfg.get("weights") or LossWeights()
    channel_cfg = cfg.get("channel") or ChannelConfig()
    phases = cfg.get("phases") or [cfg.get("schedule") or TrainingSchedule()]
    out_dir = Path(args.out_dir or cfg.get("out_dir") or "runs/latest")
    seed = cfg["seed"]

    torch.manual_seed(seed)
    if cfg.get("checkpoint"):
        model, _ = load_checkpoint(cfg["checkpoint"])
    else:
        model = TransmissionModel(mode, model_cfg, rate_cfg, srem_cfg if mode == "dpct" else None)
    dataset = _build_dataset(cfg.get("data"), mode, seed)
    probe = dataset[:1] if isinstance(dataset, torch.Tensor) else (dataset[:1] if isinstance(dataset, list) else None)
    trainer = Trainer(model, dataset, weights, channel_cfg, out_dir=out_dir, seed=seed, probe=probe)
    result = trainer.train(phases)
    print(f"wrote {len(result.checkpoints)} checkpoints and metrics.csv under {out_dir}")
    return 0


def _channel_from(args) -> ChannelConfig:
    """Channel settings from --config (if given) with flag overrides."""
    base = {}
    if getattr(args, "config", None):
        cfg = load_config_file(args.config)
        if cfg.get("channel"):
            base = {
                "kind": cfg["channel"].kind,
                "snr_db": cfg["channel"].snr_db,
                "seed": cfg["channel"].seed,
                "equalization": cfg["channel"].equalization,
            }
    if args.channel is not None:
        base["kind"] = args.channel
    if args.snr_db is not None:
        base["snr_db"] = args.snr_db
    if args.seed is not None:
        base["seed"] = args.seed
    return ChannelConfig(**base)


def _load_eval_images(arg: str, mode: str, seed: int, size: int = 64):
    if arg.startswith("synthetic:"):
        count = int(arg.split(":", 1)[1])
        if mode == "dpct":
            return [t.unsqueeze(0) for t in synthetic_texture_dataset(count, size, seed=seed)]
        return synthetic_scene_dataset(count, size, seed=seed)
    path = Path(arg)
    if path.is_dir():
        if mode != "dpct":
            raise ConfigError("directory evaluation needs label maps; use synthetic: for cct")
        return [load_image(p) for p in sorted(path.iterdir()) if p.suffix.lower() in {".png", ".jpg", ".jpeg"}]
    return [load_image(path)]


def cmd_transmit(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    channel_cfg = _channel_from(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if meta.mode == "dpct":
        images = _load_eval_images(args.image, "dpct", channel_cfg.seed)
        pipe = DistortionPerceptionPipeline(model, channel_cfg)
        if args.beta_map:
            rmap = load_realism_map(args.beta_map, beta_max=model.srem_cfg.beta_max)
            settings = [rmap]
        else:
            settings = [float(b) for b in args.betas.split(",")]
        x = images[0]
        out = pipe.transmit_multi(x, settings)
        reports = {}
        for name, (x_hat, rep) in out.items():
            fname = out_dir / f"decode_{name.replace('=', '_')}.png"
            save_image(x_hat, fname)
            reports[name] = {"psnr_db": psnr(x, x_hat), **rep.to_dict()}
        (out_dir / "report.json").write_text(json.dumps(reports, indent=2))
        print(f"one transmission, {len(settings)} decodes -> {out_dir} (channel uses: {pipe.channel_uses})")
    else:
        scenes = _load_eval_images(args.image, "cct", channel_cfg.seed)
        img, w_map = scenes[0]
        prompts = [p for p in (args.prompts.split(",") if args.prompts else []) if p]
        pipe = ContentPipeline(model, channel_cfg)
        x_hat, rep = pipe.transmit_prompts(img.unsqueeze(0) if img.dim() == 3 else img, w_map, prompts)
        save_image(x_hat, out_dir / "decode.png")
        (out_dir / "report.json").write_text(json.dumps(rep.to_dict(), indent=2))
        print(f"transmitted {prompts or 'label map only'} -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    import csv as _csv

    model, meta = load_checkpoint(args.checkpoint)
    channel_cfg = _channel_from(args)
    images = _load_eval_images(args.images, meta.mode, channel_cfg.seed)
    rows = []
    if meta.mode == "dpct":
        pipe = DistortionPerceptionPipeline(model, channel_cfg)
        betas = [float(b) for b in args.betas.split(",")]
        for i, x in enumerate(images):
            out = pipe.transmit_multi(x, betas)
            for name, (x_hat, rep) in out.items():
                rows.append([i, name, psnr(x, x_hat), rep.cbr])
    else:
        pipe = ContentPipeline(model, channel_cfg)
        prompts = [p for p in (args.prompts.split(",") if args.prompts else []) if p]
        for i, (img, w_map) in enumerate(images):
            x = img.unsqueeze(0) if img.dim() == 3 else img
            x_hat, rep = pipe.transmit_prompts(x, w_map, [p for p in prompts if p in w_map.labels()])
            rows.append([i, f"prompts={prompts}", psnr(x, x_hat), rep.cbr])
    with open(args.out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["image", "setting", "psnr_db", "cbr"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    channel_cfg = _channel_from(args)
    all_rows = []
    for ckpt in args.checkpoints.split(","):
        model, meta = load_checkpoint(ckpt)
        if meta.mode != "dpct":
            raise ConfigError("sweep currently drives distortion-perception checkpoints")
        images = _load_eval_images(args.images, "dpct", channel_cfg.seed)
        pipe = DistortionPerceptionPipeline(model, channel_cfg)
        betas = [float(b) for b in args.betas.split(",")]
        result = dp_sweep(pipe, images, betas, patch_size=args.patch_size)
        all_rows.extend(result.rows)
    from .metrics import SweepResult

    merged = SweepResult(rows=all_rows)
    merged.write_csv(args.out)
    if args.plot_prefix:
        merged.plot(args.plot_prefix)
    print(f"wrote {len(all_rows)} sweep rows to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    channel_cfg = _channel_from(args)
    models = {}
    dpct_images = []
    cct_scenes = []
    if args.dpct_checkpoint:
        model, _ = load_checkpoint(args.dpct_checkpoint)
        models["dpct"] = model
        dpct_images = [t.unsqueeze(0) for t in synthetic_texture_dataset(args.num_images, args.image_size, seed=channel_cfg.seed)]
    if args.cct_checkpoint:
        model, _ = load_checkpoint(args.cct_checkpoint)
        models["cct"] = model
        cct_scenes = synthetic_scene_dataset(args.num_images, args.image_size, seed=channel_cfg.seed)
    if not models:
        raise ConfigError("serve needs at least one of --dpct-checkpoint / --cct-checkpoint")
    app = create_app(models, channel_cfg, dpct_images=dpct_images, cct_scenes=cct_scenes)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genjscc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run training phases from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transmit", help="transmit one image and decode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", default="synthetic:1")
    p.add_argument("--betas", default="0,4,8")
    p.add_argument("--beta-map", help="realism map file (text or grayscale raster)")
    p.add_argument("--prompts", default="")
    p.add_argument("--config", help="YAML config supplying channel/seed defaults")
    p.add_argument("--channel", default=None, choices=["awgn", "rayleigh"])
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_transmit)

    p = sub.add_parser("eval", help="per-image metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", default="synthetic:8")
    p.add_argument("--betas", default="0,8")
    p.add_argument("--prompts", default="")
    p.add_argument("--config", help="YAML config supplying channel/seed defaults")
    p.add_argument("--channel", default=None, choices=["awgn", "rayleigh"])
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="eval.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="distortion-perception sweep to CSV/plots")
    p.add_argument("--checkpoints", required=True, help="comma-separated checkpoint paths")
    p.add_argument("--images", default="synthetic:4")
    p.add_argument("--betas", default="0,4,8")
    p.add_argument("--config", help="YAML config supplying channel/seed defaults")
    p.add_argument("--channel", default=None, choices=["awgn", "rayleigh"])
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--plot-prefix")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="run the session service")
    p.add_argument("--dpct-checkpoint")
    p.add_argument("--cct-checkpoint")
    p.add_argument("--config", help="YAML config supplying channel/seed defaults")
    p.add_argument("--channel", default=None, choices=["awgn", "rayleigh"])
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--num-images", type=int, default=4)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
