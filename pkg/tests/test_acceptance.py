"""Acceptance suite: one test per exit criterion, at its stated tolerance.

Each test registers a pass/fail line that the terminal summary prints. The
three-seed two-domain training runs are shared session-wide because the
alignment and structural criteria are measured on the same artifacts.

Protocol for the distribution-shift analog (fixed after calibration):
256 source images train stage 1; 10 target references drive stage 2; both
models then generate 64 images on source masks with the conditional
sampler, and their pooled features are scored against 64 held-out target
images.
"""

import json
import time

import numpy as np
import pytest

from conftest import record_criterion
from gradcheck import finite_diff_sampled, rel_err
from test_rewards import mmd_reward_oracle

from flowalign.autodiff import Tensor
from flowalign.cli import main as cli_main
from flowalign.config import KernelConfig, OptimizerConfig, SamplerConfig, TrainConfig
from flowalign.datagen import SOURCE_DOMAIN, TARGET_DOMAIN, gen_dataset, write_dataset
from flowalign.evalkit import eval_mmd, mask_agreement_iou, mini_frechet
from flowalign.flow import frozen_rollout, sample, tunable_jump
from flowalign.masksynth import morph_close, morph_open
from flowalign.nets import ControlledVectorFieldNet, NetSpec
from flowalign.optim import AdamW, collect_grads
from flowalign.rewards import DEFAULT_FEATURE_SEED, FeatureExtractor, alignment_loss, mmd_reward, skl_reward
from flowalign.trainer import (
    TrainState,
    draw_batch,
    pretrain_base,
    reference_features,
    train_step,
)

# -- 1. MMD oracle equivalence ---------------------------------------------------


def test_mmd_oracle_equivalence():
    rng = np.random.default_rng(2026)
    start = time.time()
    worst = 0.0
    for _ in range(200):
        m, n, d = rng.integers(2, 9), rng.integers(2, 9), rng.integers(1, 9)
        f = rng.normal(size=(m, d)) * rng.uniform(0.5, 3.0)
        g = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0)
        cfg = KernelConfig(
            c=float(rng.uniform(0.5, 2.0)), degree=int(rng.integers(1, 4)), dim_scale=int(d)
        )
        got = mmd_reward(Tensor(f), Tensor(g), cfg).item()
        want = mmd_reward_oracle(f, g, cfg)
        worst = max(worst, abs(got - want))
        assert abs(got - want) < 1e-10
    elapsed = time.time() - start
    assert elapsed < 5.0
    record_criterion(
        "mmd-oracle-equivalence", True, f"200 cases, worst |diff| {worst:.1e}, {elapsed:.1f}s"
    )


# -- 2. gradient suite ---------------------------------------------------------------

GRAD_SPEC = NetSpec(image_side=8, hidden=16, blocks=2, time_embed=8)


def _grad_case_net(seed):
    net = ControlledVectorFieldNet.build(GRAD_SPEC, seed)
    net.base.set_frozen(True)
    return net


def _sampled_param_check(loss_fn, params, rng, n_coords=6, h=1e-5):
    """Compare analytic gradients against central differences on a few
    coordinates of each listed parameter; returns the worst relative error."""
    loss = loss_fn()
    grads = collect_grads(loss, params)
    worst = 0.0
    for name, p in params:
        if name not in grads:
            continue
        coords = rng.choice(p.data.size, size=min(n_coords, p.data.size), replace=False)
        analytic = grads[name].reshape(-1)[coords]

        def value(arr, p=p):
            orig = p.data
            p.data = arr.reshape(p.data.shape)
            out = loss_fn().item()
            p.data = orig
            return out

        fd = finite_diff_sampled(value, p.data.copy(), coords, h=h)
        worst = max(worst, rel_err(analytic, fd))
    return worst


def test_gradient_suite():
    start = time.time()
    rng = np.random.default_rng(7)
    net = _grad_case_net(3)
    flat = GRAD_SPEC.flat
    b = 3
    x1 = rng.uniform(size=(b, flat))
    masks = (rng.uniform(size=(b, flat)) > 0.5).astype(np.float64)
    eps = rng.standard_normal((b, flat))
    t = rng.uniform(0.1, 0.9, size=b)
    flags = np.array([False, True, False])
    ex = FeatureExtractor(side=GRAD_SPEC.image_side, out_dim=12, seed=5)
    refs = Tensor(rng.normal(size=(5, 12)))
    x_s = frozen_rollout(net.frozen_view(), Tensor(rng.standard_normal((b, flat))), Tensor(masks), 0.9, 1 / 20)

    def loss_d():
        x_t = x1 * t[:, None] + eps * (1 - t)[:, None]
        pred = net.forward(Tensor(x_t), t, Tensor(masks), uncond_flag=flags)
        diff = pred - Tensor(x1 - eps)
        return (diff * diff).mean()

    def jump_features():
        x_hat = tunable_jump(net, x_s, 0.9, Tensor(masks))
        rows = [x_hat.reshape(-1).gather(np.arange(i * flat, (i + 1) * flat)) for i in range(b)]
        return ex.extract(rows)

    def loss_a_mmd():
        return alignment_loss(jump_features(), refs, "mmd", KernelConfig(dim_scale=12))

    def loss_a_skl():
        return alignment_loss(jump_features(), refs, "skl")

    def loss_total():
        return loss_d() + loss_a_mmd() * 1.0

    params = list(net.control.items())
    subset = [params[i] for i in rng.choice(len(params), size=8, replace=False)]
    errs = {
        "L_D": _sampled_param_check(loss_d, subset, rng),
        "L_A(mmd)": _sampled_param_check(loss_a_mmd, subset, rng),
        "L_A(skl)": _sampled_param_check(loss_a_skl, subset, rng),
        "L_D+L_A": _sampled_param_check(loss_total, subset, rng),
    }

    # extractor: gradient w.r.t. input pixels
    img = rng.uniform(size=(GRAD_SPEC.image_side, GRAD_SPEC.image_side))
    weights = rng.normal(size=12)
    img_t = Tensor(img.copy(), requires_grad=True)
    (ex.extract([img_t]) * Tensor(weights[None, :])).sum().backward()
    coords = rng.choice(img.size, size=10, replace=False)

    def pixel_value(arr):
        return float(np.dot(ex.extract([arr]).data[0], weights))

    fd = finite_diff_sampled(pixel_value, img.copy(), coords)
    errs["extractor"] = rel_err(img_t.grad.reshape(-1)[coords], fd)

    elapsed = time.time() - start
    worst = max(errs.values())
    assert worst < 1e-4, errs
    assert elapsed < 60.0
    record_criterion(
        "gradient-suite",
        True,
        "worst rel err " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f", {elapsed:.1f}s",
    )


# -- 3. detachment ----------------------------------------------------------------------


def test_detachment():
    rng = np.random.default_rng(11)
    spec = NetSpec(image_side=8, hidden=16, blocks=2, time_embed=8)
    net = ControlledVectorFieldNet.build(spec, 4)
    net.base.set_frozen(True)
    base_before = {n: p.data.copy() for n, p in net.base.items()}

    cfg = TrainConfig(
        seed=0, optimizer=OptimizerConfig(batch_size=3), kernel=KernelConfig(dim_scale=12)
    )
    ex = FeatureExtractor(side=8, out_dim=12, seed=5)
    refs = reference_features(rng.uniform(size=(5, 8, 8)), ex)
    images = rng.uniform(size=(6, spec.flat))
    masks = (rng.uniform(size=(6, spec.flat)) > 0.5).astype(np.float64)
    state = TrainState(
        net=net,
        optimizer=AdamW(net.control, cfg.optimizer),
        iteration=0,
        stage=2,
        rng=np.random.default_rng(3),
    )
    train_step(state, draw_batch(images, masks, cfg, state.rng), cfg, ref_features=refs, extractor=ex)

    for name, p in net.base.items():
        assert p.data.tobytes() == base_before[name].tobytes(), name

    # differentiate the alignment term alone: every frozen-view parameter
    # stays out of the graph, which is the exact-zero gradient contract
    from flowalign.trainer import alignment_term

    view = net.frozen_view()
    term = alignment_term(net, masks[:3], refs, 0.9, cfg, ex, np.random.default_rng(5))
    term.backward()
    frozen_grads = [p.grad for _, p in view.base.items()] + [p.grad for _, p in view.control.items()]
    base_grads = [p.grad for _, p in net.base.items()]
    assert all(g is None for g in frozen_grads + base_grads)
    assert any(p.grad is not None for _, p in net.control.items())
    record_criterion(
        "detachment", True, "frozen params bitwise stable, alignment gradient exactly zero on them"
    )


# -- 4. flow sanity ---------------------------------------------------------------------


def test_flow_sanity():
    """A single-sample corpus must collapse the flow onto its one image.

    Iteration 0 is the untrained model; the denoising phase then runs its
    base pretraining (500 iters) followed by 1000 stage-1 iterations, and
    64 conditional samples must land within 10% of the initial MSE.
    """
    start = time.time()
    images, masks = gen_dataset(SOURCE_DOMAIN, 1, 16, seed=21)
    img = images[0].reshape(1, -1)
    mask = masks[0].reshape(1, -1)
    cfg = TrainConfig(base_iters=500, stage1_iters=1000, seed=2)

    def sample_mse(net):
        cond = Tensor(np.tile(mask, (64, 1)))
        out = sample(net, cond=cond, cfg=SamplerConfig(steps=28, guidance_scale=1.0), rng_seed=33)
        return float(np.mean((out.data - img) ** 2))

    fresh = ControlledVectorFieldNet.build(NetSpec(), seed=cfg.seed)
    mse0 = sample_mse(fresh)

    net = pretrain_base(img, cfg, NetSpec())
    state = TrainState(
        net=net,
        optimizer=AdamW(net.control, cfg.optimizer),
        iteration=0,
        stage=1,
        rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])),
    )
    for _ in range(cfg.stage1_iters):
        train_step(state, draw_batch(img, mask, cfg, state.rng), cfg)
    mse1 = sample_mse(net)
    elapsed = time.time() - start
    assert elapsed < 300.0
    assert mse1 < 0.10 * mse0, (mse0, mse1)
    record_criterion(
        "flow-sanity", True, f"MSE {mse0:.3f} -> {mse1:.4f} (ratio {mse1 / mse0:.3f}), {elapsed:.0f}s"
    )


# -- 5/6. two-domain alignment analog and structural consistency -----------------------

# Calibrated protocol (see scripts/run_two_domain.py for the standalone
# version): stage 1 needs the larger budget to reach usable conditional
# quality at this scale, and stage 2 runs in a fine-tuning regime where the
# alignment improves steadily without disturbing mask agreement.
PROTOCOL = {
    "seeds": (0, 1, 2),
    "n_source": 256,
    "n_pool": 64,
    "n_eval": 64,
    "n_refs": 10,  # few-shot reference count
    "size": 16,
    "base_iters": 6000,
    "stage1_iters": 6000,
    "stage2_iters": 500,
    "stage1_batch": 32,
    "stage2_batch": 48,  # larger reward batches tighten the per-step estimate
    "stage1_lr": 1e-3,
    "stage2_lr": 1e-4,
    "guidance": 7.0,
    "gen_seeds": (77, 78, 79),  # pooled generations tighten the metric estimates
}


def _two_domain_seed_run(seed, tmp_root):
    from flowalign.trainer import load_net, run_training

    p = PROTOCOL
    src_images, src_masks = gen_dataset(SOURCE_DOMAIN, p["n_source"], p["size"], seed=seed)
    write_dataset(tmp_root / "source", src_images, src_masks)
    pool_images, pool_masks = gen_dataset(TARGET_DOMAIN, p["n_pool"], p["size"], seed=seed + 1000)
    eval_images, _ = gen_dataset(TARGET_DOMAIN, p["n_eval"], p["size"], seed=seed + 2000)
    write_dataset(tmp_root / "refs", pool_images[: p["n_refs"]], pool_masks[: p["n_refs"]])

    def stage_cfg(lr, stage2_iters=0):
        return TrainConfig(
            base_iters=p["base_iters"],
            stage1_iters=p["stage1_iters"],
            stage2_iters=stage2_iters,
            seed=seed,
            w_align=1.0,
            optimizer=OptimizerConfig(batch_size=p["batch"], learning_rate=lr),
        )

    out = tmp_root / "train"
    run_training(stage_cfg(p["stage1_lr"]), tmp_root / "source", out_dir=out, stage="1")
    run_training(
        stage_cfg(p["stage2_lr"], p["stage2_iters"]),
        tmp_root / "source",
        ref_dir=tmp_root / "refs",
        out_dir=out,
        stage="2",
    )

    extractor = FeatureExtractor(side=p["size"], out_dim=64, seed=DEFAULT_FEATURE_SEED)
    eval_features = extractor.extract(eval_images).data
    cond = np.stack([m.reshape(-1) for m in src_masks[:64]])
    sampler = SamplerConfig(guidance_scale=p["guidance"])

    metrics = {}
    for stage_name in ("stage1", "stage2"):
        net, _ = load_net(out / f"{stage_name}.ckpt", control_trainable=False)
        generated = []
        for gs in p["gen_seeds"]:
            batch = sample(net, cond=Tensor(cond), cfg=sampler, rng_seed=seed + gs)
            generated += [np.clip(row.reshape(p["size"], p["size"]), 0, 1) for row in batch.data]
        feats = extractor.extract(generated).data
        metrics[stage_name] = {
            "mmd": eval_mmd(feats, eval_features),
            "frechet": mini_frechet(feats, eval_features),
            "iou": float(
                np.mean(
                    [mask_agreement_iou(g, src_masks[i % 64]) for i, g in enumerate(generated)]
                )
            ),
        }
    return metrics


@pytest.fixture(scope="session")
def two_domain_results(tmp_path_factory):
    results = {}
    for seed in PROTOCOL["seeds"]:
        root = tmp_path_factory.mktemp(f"twodomain_seed{seed}")
        results[seed] = _two_domain_seed_run(seed, root)
    return results


def test_alignment_analog(two_domain_results):
    """Stage 2 must pull generated features toward the held-out target set:
    eval MMD at most 60% of its stage-1 value and a decreasing Fréchet
    distance, on a majority of the three seeds."""
    per_seed = []
    for seed, m in two_domain_results.items():
        ratio = m["stage2"]["mmd"] / m["stage1"]["mmd"]
        f_dec = m["stage2"]["frechet"] < m["stage1"]["frechet"]
        per_seed.append((seed, ratio, f_dec, ratio <= 0.60 and f_dec))
    passing = sum(1 for *_, ok in per_seed if ok)
    detail = ", ".join(f"seed{s} ratio {r:.2f}{'+' if fd else '-'}" for s, r, fd, _ in per_seed)
    ok = passing >= 2
    record_criterion("alignment-analog", ok, f"{detail}; {passing}/3 pass both")
    assert ok, per_seed


def test_structural_consistency(two_domain_results):
    """Generated images must still agree with their conditioning masks:
    mean IoU >= 0.7 for the stage-1 model (calibration anchor) and for the
    stage-2 model, with stage 2 dropping at most 0.05."""
    iou1 = float(np.mean([m["stage1"]["iou"] for m in two_domain_results.values()]))
    iou2 = float(np.mean([m["stage2"]["iou"] for m in two_domain_results.values()]))
    ok = iou1 >= 0.70 and iou2 >= 0.70 and (iou1 - iou2) <= 0.05
    record_criterion(
        "structural-consistency",
        ok,
        f"mean IoU stage1 {iou1:.3f}, stage2 {iou2:.3f}, drop {iou1 - iou2:+.3f}",
    )
    assert ok, (iou1, iou2)


# -- 7. morphology suite -------------------------------------------------------------------


def test_morphology_suite():
    start = time.time()
    for bits in range(512):
        pattern = np.array([(bits >> k) & 1 for k in range(9)], dtype=np.float64).reshape(3, 3)
        mask = np.zeros((7, 7))
        mask[2:5, 2:5] = pattern
        opened = morph_open(mask, 3)
        closed = morph_close(mask, 3)
        assert np.all(opened <= mask)  # anti-extensive
        assert np.all(closed >= mask)  # extensive
        np.testing.assert_array_equal(morph_open(opened, 3), opened)
        np.testing.assert_array_equal(morph_close(closed, 3), closed)
    elapsed = time.time() - start
    assert elapsed < 1.0
    record_criterion("morphology-suite", True, f"512 patterns exact, {elapsed:.2f}s")


# -- 8. SKL properties -----------------------------------------------------------------------


def test_skl_properties():
    rng = np.random.default_rng(13)
    for _ in range(100):
        f = rng.normal(size=(rng.integers(1, 8), 10)) * 2
        g = rng.normal(size=(rng.integers(1, 8), 10)) * 2
        fw, gw = Tensor(f), Tensor(g)
        ab = skl_reward(fw, gw).item()
        ba = skl_reward(gw, fw).item()
        assert ab == ba  # exact symmetry
        assert -ab >= 0.0  # reward negation is a divergence
    ident = rng.normal(size=(4, 10))
    assert skl_reward(Tensor(ident), Tensor(ident.copy())).item() == 0.0
    record_criterion("skl-properties", True, "symmetry exact, zero on identical, 100 nonneg cases")


# -- 9. determinism -----------------------------------------------------------------------------


def test_determinism(tmp_path):
    images, masks = gen_dataset(SOURCE_DOMAIN, 6, 8, seed=4)
    write_dataset(tmp_path / "data", images, masks)
    ref_i, ref_m = gen_dataset(TARGET_DOMAIN, 4, 8, seed=5)
    write_dataset(tmp_path / "refs", ref_i, ref_m)
    config = tmp_path / "config.json"
    config.write_text(
        json.dumps(
            {
                "train": {
                    "base_iters": 5,
                    "stage1_iters": 8,
                    "stage2_iters": 4,
                    "log_every": 2,
                    "seed": 9,
                    "optimizer": {"batch_size": 3},
                }
            }
        )
    )
    outputs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        code = cli_main(
            [
                "train",
                "--data", str(tmp_path / "data"),
                "--refs", str(tmp_path / "refs"),
                "--config", str(config),
                "--stage", "both",
                "--out", str(out),
            ]
        )
        assert code == 0
        outputs.append(out)
    for name in ("stage1.ckpt", "stage2.ckpt", "losses.csv"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes(), name
    record_criterion("determinism", True, "two `train --stage both` runs byte-identical")
