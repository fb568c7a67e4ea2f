"""End-to-end two-domain experiment driver.

Generates a source corpus and a target pool/eval split, trains stage 1 on
the source, fine-tunes stage 2 against a handful of target references, then
scores stage-1 and stage-2 samples against the held-out target set. Useful
for eyeballing the alignment effect and for sweeping w_align.

The defaults mirror the calibrated acceptance protocol: a large stage-1
budget for conditional quality, then stage 2 in a fine-tuning regime
(smaller learning rate), and pooled generations for tight metric estimates.

Usage:
    python scripts/run_two_domain.py --seed 0 --w-align 1.0 --out /tmp/run
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from flowalign.autodiff import Tensor
from flowalign.config import OptimizerConfig, SamplerConfig, TrainConfig
from flowalign.datagen import SOURCE_DOMAIN, TARGET_DOMAIN, gen_dataset, load_dataset, write_dataset
from flowalign.evalkit import eval_mmd, mask_agreement_iou, mini_frechet
from flowalign.flow import sample
from flowalign.pgm import write_indexed
from flowalign.rewards import DEFAULT_FEATURE_SEED, FeatureExtractor, extract_features
from flowalign.trainer import load_net, run_training


def build_corpora(root: Path, size: int, seed: int, n_refs: int):
    src_images, src_masks = gen_dataset(SOURCE_DOMAIN, 256, size, seed=seed)
    write_dataset(root / "source_train", src_images, src_masks)
    pool_images, pool_masks = gen_dataset(TARGET_DOMAIN, 64, size, seed=seed + 1000)
    write_dataset(root / "target_pool", pool_images, pool_masks)
    eval_images, eval_masks = gen_dataset(TARGET_DOMAIN, 64, size, seed=seed + 2000)
    write_dataset(root / "target_eval", eval_images, eval_masks)
    write_dataset(root / "refs", pool_images[:n_refs], pool_masks[:n_refs])
    return root / "source_train", root / "refs", root / "target_eval"


def pooled_generation(net, masks, sampler, seed, gen_seeds=(77, 78, 79)):
    cond = np.stack([m.reshape(-1) for m in masks])
    side = masks[0].shape[0]
    images = []
    for gs in gen_seeds:
        out = sample(net, cond=Tensor(cond), cfg=sampler, rng_seed=seed + gs)
        images += [np.clip(row.reshape(side, side), 0.0, 1.0) for row in out.data]
    return images


def run(seed: int, w_align: float, out: Path, size: int = 16,
        base_iters: int = 4000, stage1_iters: int = 4000, stage2_iters: int = 500,
        batch: int = 32, stage1_lr: float = 1e-3, stage2_lr: float = 1e-4,
        guidance: float = 7.0, n_refs: int = 10) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    data_dir, ref_dir, eval_dir = build_corpora(out / "corpora", size, seed, n_refs)

    def cfg(lr, s2):
        return TrainConfig(
            base_iters=base_iters, stage1_iters=stage1_iters, stage2_iters=s2,
            w_align=w_align, seed=seed,
            optimizer=OptimizerConfig(batch_size=batch, learning_rate=lr),
        )

    t0 = time.time()
    run_training(cfg(stage1_lr, 0), data_dir, out_dir=out / "train", stage="1")
    paths = run_training(cfg(stage2_lr, stage2_iters), data_dir, ref_dir=ref_dir,
                         out_dir=out / "train", stage="2")
    train_time = time.time() - t0

    src_images, src_masks = load_dataset(data_dir)
    eval_images, _ = load_dataset(eval_dir)
    gen_masks = src_masks[:64]
    extractor = FeatureExtractor(side=size, out_dim=64, seed=DEFAULT_FEATURE_SEED)
    eval_features = extract_features(extractor, eval_images).data
    sampler = SamplerConfig(guidance_scale=guidance)

    results = {"seed": seed, "w_align": w_align, "train_seconds": round(train_time, 1)}
    for stage in ("stage1", "stage2"):
        net, _ = load_net(out / "train" / f"{stage}.ckpt", control_trainable=False)
        images = pooled_generation(net, gen_masks, sampler, seed)
        write_indexed(out / f"gen_{stage}" / "images", images)
        write_indexed(out / f"gen_{stage}" / "masks", [gen_masks[i % 64] for i in range(len(images))])
        feats = extract_features(extractor, images).data
        results[stage] = {
            "mmd": eval_mmd(feats, eval_features),
            "frechet": mini_frechet(feats, eval_features),
            "iou": float(np.mean([mask_agreement_iou(img, gen_masks[i % 64]) for i, img in enumerate(images)])),
        }
    results["mmd_ratio"] = results["stage2"]["mmd"] / results["stage1"]["mmd"]
    results["frechet_decreased"] = results["stage2"]["frechet"] < results["stage1"]["frechet"]
    return results


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--w-align", type=float, default=1.0)
    ap.add_argument("--stage1-iters", type=int, default=4000)
    ap.add_argument("--stage2-iters", type=int, default=500)
    ap.add_argument("--guidance", type=float, default=7.0)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    results = run(args.seed, args.w_align, args.out,
                  stage1_iters=args.stage1_iters, stage2_iters=args.stage2_iters,
                  guidance=args.guidance)
    print(json.dumps(results, indent=2))
    (args.out / "results.json").write_text(json.dumps(results, indent=2) + "\n")


if __name__ == "__main__":
    main()
