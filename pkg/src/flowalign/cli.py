"""Command-line surface: dataset generation, training, sampling, mask
synthesis, evaluation, and embedding export.

Every subcommand is deterministic given its seed flags, exits 0 on success,
and reports failures as one-line diagnostics with a nonzero exit code. The
effective configuration (file values with flag overrides applied) is echoed
to <out>/config.resolved.json wherever a command writes artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .config import MaskPipelineConfig, SamplerConfig, TrainConfig, config_from_dict
from .datagen import BUILTIN_DOMAINS, DomainSpec, gen_dataset, load_dataset, write_dataset
from .evalkit import (
    eval_mmd,
    mask_agreement_iou,
    mini_frechet,
    pca_embed_2d,
    psnr,
    write_embeddings_csv,
    write_metrics_csv,
)
from .flow import sample as sample_flow
from .nets import NetSpec
from .pgm import read_dir, write_indexed
from .rewards import DEFAULT_FEATURE_SEED, FeatureExtractor, extract_features
from .trainer import load_net, net_records, pretrain_base, run_training
from .checkpoint import write_checkpoint
from .masksynth import synthesize_masks


def _load_config(path) -> dict:
    if path is None:
        return config_from_dict({})
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(raw)


def _echo_resolved(out_dir, cfg: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {name: asdict(section) for name, section in cfg.items()}
    with open(out_dir / "config.resolved.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _images_dir(path) -> Path:
    path = Path(path)
    return path / "images" if (path / "images").is_dir() else path


def _masks_dir(path) -> Path:
    path = Path(path)
    return path / "masks" if (path / "masks").is_dir() else path


def _domain_spec(name: str) -> DomainSpec:
    if name in BUILTIN_DOMAINS:
        return BUILTIN_DOMAINS[name]
    with open(name) as fh:
        data = json.load(fh)
    return DomainSpec(**data)


def cmd_datagen(args) -> int:
    spec = _domain_spec(args.spec)
    images, masks = gen_dataset(spec, args.n, args.size, args.seed)
    write_dataset(args.out, images, masks)
    return 0


def cmd_pretrain_base(args) -> int:
    cfg = _load_config(args.config)
    images, _ = load_dataset(args.data)
    side = images[0].shape[0]
    flat = np.stack([img.reshape(-1) for img in images])
    net = pretrain_base(flat, cfg["train"], NetSpec(image_side=side))
    write_checkpoint(args.out, net_records(net))
    _echo_resolved(Path(args.out).parent, cfg)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    run_training(
        cfg["train"],
        args.data,
        ref_dir=args.refs,
        out_dir=args.out,
        stage=args.stage,
        base_ckpt=args.base,
    )
    _echo_resolved(args.out, cfg)
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(getattr(args, "config", None))
    sampler = SamplerConfig(steps=args.steps, guidance_scale=args.guidance, d_t=cfg["sampler"].d_t)
    cfg["sampler"] = sampler
    net, _ = load_net(args.ckpt, control_trainable=False)
    masks = read_dir(_masks_dir(args.masks))
    side = net.spec.image_side
    for i, m in enumerate(masks):
        if m.shape != (side, side):
            raise ValueError(f"mask {i} has shape {m.shape}, expected {side}x{side}")
    cond = np.stack([m.reshape(-1) for m in masks])
    out = sample_flow(net, cond=Tensor(cond), cfg=sampler, rng_seed=args.seed)
    images = [np.clip(row.reshape(side, side), 0.0, 1.0) for row in out.data]
    write_indexed(Path(args.out) / "images", images)
    write_indexed(Path(args.out) / "masks", masks)
    _echo_resolved(args.out, cfg)
    return 0


def cmd_masksynth(args) -> int:
    cfg = _load_config(getattr(args, "config", None))
    pipeline = cfg["mask_pipeline"]
    pipeline = MaskPipelineConfig(
        threshold=pipeline.threshold,
        blur_sigma=pipeline.blur_sigma,
        blur_kernel=pipeline.blur_kernel,
        structuring_element=pipeline.structuring_element,
        candidates=args.k,
    )
    cfg["mask_pipeline"] = pipeline
    net, _ = load_net(args.mask_model, control_trainable=False)
    real = read_dir(_masks_dir(args.real_masks))
    extractor = FeatureExtractor(side=net.spec.image_side, seed=DEFAULT_FEATURE_SEED)
    synthetic = synthesize_masks(net, real, pipeline, args.seed, extractor=extractor)
    write_indexed(Path(args.out) / "masks", synthetic)
    _echo_resolved(args.out, cfg)
    return 0


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    known = {"mmd", "frechet", "psnr", "iou"}
    unknown = set(metrics) - known
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")

    gen_images = read_dir(_images_dir(args.gen))
    ref_images = read_dir(_images_dir(args.ref))
    side = gen_images[0].shape[0]
    extractor = FeatureExtractor(side=side, seed=DEFAULT_FEATURE_SEED)
    results: dict[str, float] = {}
    if "mmd" in metrics or "frechet" in metrics:
        gen_f = extract_features(extractor, gen_images).data
        ref_f = extract_features(extractor, ref_images).data
        if "mmd" in metrics:
            results["mmd"] = eval_mmd(gen_f, ref_f)
        if "frechet" in metrics:
            results["frechet"] = mini_frechet(gen_f, ref_f)
    if "psnr" in metrics:
        n = min(len(gen_images), len(ref_images))
        results["psnr"] = float(np.mean([psnr(gen_images[i], ref_images[i]) for i in range(n)]))
    if "iou" in metrics:
        masks = read_dir(Path(args.gen) / "masks")
        if len(masks) != len(gen_images):
            raise ValueError("iou needs one conditioning mask per generated image")
        results["iou"] = float(
            np.mean([mask_agreement_iou(img, m) for img, m in zip(gen_images, masks)])
        )
    write_metrics_csv(args.out, results)
    return 0


def cmd_embed(args) -> int:
    pairs = []
    for item in args.sets.split(","):
        if "=" not in item:
            raise ValueError(f"--sets entries must look like NAME=DIR, got {item!r}")
        name, directory = item.split("=", 1)
        pairs.append((name, read_dir(_images_dir(directory))))
    side = pairs[0][1][0].shape[0]
    extractor = FeatureExtractor(side=side, seed=DEFAULT_FEATURE_SEED)
    labels, feats = [], []
    for name, images in pairs:
        labels.extend([name] * len(images))
        feats.append(extract_features(extractor, images).data)
    coords = pca_embed_2d(np.vstack(feats))
    grouped, pos = [], 0
    for name, images in pairs:
        grouped.append((name, coords[pos : pos + len(images)]))
        pos += len(images)
    write_embeddings_csv(args.out, grouped)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowalign",
        description="Two-stage flow matching with distribution-alignment rewards",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic image/mask corpus")
    p.add_argument("--spec", required=True, help="source, target, or a JSON domain file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("pretrain-base", help="train the unconditional base trunk")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain_base)

    p = sub.add_parser("train", help="run stage 1 / stage 2 training")
    p.add_argument("--data", required=True)
    p.add_argument("--refs", default=None)
    p.add_argument("--base", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--stage", choices=["1", "2", "both"], default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="guided Euler sampling conditioned on masks")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--steps", type=int, default=28)
    p.add_argument("--guidance", type=float, default=7.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("masksynth", help="synthesize cleaned best-of-K masks")
    p.add_argument("--mask-model", required=True)
    p.add_argument("--real-masks", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_masksynth)

    p = sub.add_parser("eval", help="feature and pixel metrics between two sets")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", default="mmd,frechet,psnr,iou")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("embed", help="export 2-D feature embeddings of labeled sets")
    p.add_argument("--sets", required=True, help="NAME=DIR[,NAME=DIR...]")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
