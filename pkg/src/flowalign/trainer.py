"""Two-stage training loop.

Stage 1 minimizes the denoising objective on the conditional field. Stage 2
adds the alignment term: fresh noise is rolled out to a late time s under
frozen weights, one tunable jump predicts the clean sample, and the feature
distribution of the jumped batch is scored against cached reference
features. Only the jump evaluation carries gradient.

Per-step draws come from one generator in a fixed order (batch indices,
dropout flags, noise, times, then the stage-2 start time and rollout noise),
and each phase runs on its own seed-derived stream, so `--stage both` and a
stage-1 checkpoint followed by `--stage 2` produce identical bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, Tensor
from .checkpoint import read_checkpoint, write_checkpoint
from .config import TrainConfig, grid_cells
from .datagen import load_dataset
from .flow import frozen_rollout, tunable_jump
from .nets import ControlledVectorFieldNet, NetSpec
from .optim import AdamW, collect_grads
from .rewards import DEFAULT_FEATURE_SEED, FeatureExtractor, alignment_loss, extract_features


@dataclass
class Batch:
    images: np.ndarray  # (B, H*W), values in [0, 1]
    masks: np.ndarray  # (B, H*W)
    uncond: np.ndarray  # (B,) bool, true where the condition is dropped

    def __post_init__(self):
        if len(self.images) != len(self.masks) or len(self.images) != len(self.uncond):
            raise ValueError("images, masks, and flags must align one-to-one")
        if self.images.min() < 0 or self.images.max() > 1:
            raise ValueError("pixel values must lie in [0, 1]")


@dataclass
class LossRecord:
    iteration: int
    stage: int
    loss_d: float
    loss_a: float | None
    total: float


@dataclass
class TrainState:
    net: ControlledVectorFieldNet
    optimizer: AdamW
    iteration: int
    stage: int
    rng: np.random.Generator


def denoising_loss(net, batch: Batch, rng: np.random.Generator) -> Tensor:
    """Mean squared error against the straight-path target field.

    Draws per-sample noise and times, forms the noisy state, and compares
    the prediction with x1 - eps averaged over every element.
    """
    x1 = batch.images
    b = x1.shape[0]
    eps = rng.standard_normal(x1.shape)
    t = rng.uniform(0.0, 1.0, size=b)
    x_t = x1 * t[:, None] + eps * (1.0 - t)[:, None]
    pred = net.forward(Tensor(x_t), t, Tensor(batch.masks), uncond_flag=batch.uncond)
    diff = pred - Tensor(x1 - eps)
    return (diff * diff).mean()


def sample_start_time(rng: np.random.Generator, t_s_index: int, d_t: float = 1.0 / 20.0) -> float:
    """Uniform grid index in {t_s_index, ..., cells-1}, returned as a time."""
    cells = grid_cells(d_t)
    if not (0 <= t_s_index <= cells - 1):
        raise ValueError(f"t_s_index must lie in [0, {cells - 1}]")
    j = int(rng.integers(t_s_index, cells))
    return j / cells


def alignment_term(
    net: ControlledVectorFieldNet,
    masks: np.ndarray,
    ref_features: Tensor,
    s: float,
    cfg: TrainConfig,
    extractor: FeatureExtractor,
    rng: np.random.Generator,
) -> Tensor:
    """Alignment loss of a freshly generated batch conditioned on the masks.

    The rollout to x_s runs under a frozen view (no gradient linkage); the
    single jump to the predicted clean sample is the only trainable
    evaluation. Images are the jump output reshaped, identity-decoded.
    """
    x0 = rng.standard_normal(masks.shape)
    x_s = frozen_rollout(net.frozen_view(), Tensor(x0), Tensor(masks), s, cfg.d_t)
    x_hat = tunable_jump(net, x_s, s, Tensor(masks))

    side = int(np.sqrt(masks.shape[1]))
    b = masks.shape[0]
    flat = x_hat.reshape(-1)
    rows = [flat.gather(np.arange(i * side * side, (i + 1) * side * side)) for i in range(b)]
    f_out = extract_features(extractor, rows)
    return alignment_loss(f_out, ref_features, cfg.reward_kind, cfg.kernel)


def draw_batch(
    images: np.ndarray, masks: np.ndarray, cfg: TrainConfig, rng: np.random.Generator
) -> Batch:
    n = images.shape[0]
    idx = rng.integers(0, n, size=cfg.optimizer.batch_size)
    uncond = rng.random(cfg.optimizer.batch_size) < cfg.cond_dropout_prob
    return Batch(images[idx], masks[idx], uncond)


def train_step(
    state: TrainState,
    batch: Batch,
    cfg: TrainConfig,
    ref_features: Tensor | None = None,
    extractor: FeatureExtractor | None = None,
) -> LossRecord:
    """One optimization step of the current stage; returns the loss record."""
    state.iteration += 1
    try:
        loss_d = denoising_loss(state.net, batch, state.rng)
        if state.stage == 1:
            loss_a = None
            total = loss_d
        else:
            if ref_features is None or extractor is None:
                raise ValueError("stage 2 requires reference features and an extractor")
            s = sample_start_time(state.rng, cfg.t_s_index, cfg.d_t)
            loss_a = alignment_term(
                state.net, batch.masks, ref_features, s, cfg, extractor, state.rng
            )
            total = loss_d + loss_a * cfg.w_align
        grads = collect_grads(total, list(state.net.control.items()))
        state.optimizer.step(grads)
    except NonFiniteError as exc:
        raise NonFiniteError(f"non-finite loss at iteration {state.iteration}") from exc
    return LossRecord(
        iteration=state.iteration,
        stage=state.stage,
        loss_d=loss_d.item(),
        loss_a=None if loss_a is None else loss_a.item(),
        total=total.item(),
    )


# -- base pretraining ---------------------------------------------------------


def pretrain_base(
    images: np.ndarray,
    cfg: TrainConfig,
    spec: NetSpec,
) -> ControlledVectorFieldNet:
    """Train the base trunk unconditionally, then freeze it.

    The conditioning slot is zeroed (flag raised) for every sample, matching
    how the trunk will be driven when the guidance scale collapses to the
    unconditional branch.
    """

    class _BaseView:
        def __init__(self, net):
            self.net = net

        def forward(self, x, t, cond, uncond_flag=None):
            return self.net.forward_base(x, t, cond, uncond_flag)

    net = ControlledVectorFieldNet.build(spec, seed=cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    opt = AdamW(net.base, cfg.optimizer)
    view = _BaseView(net)
    masks = np.zeros_like(images)
    for i in range(cfg.base_iters):
        idx = rng.integers(0, images.shape[0], size=cfg.optimizer.batch_size)
        batch = Batch(images[idx], masks[idx], np.ones(cfg.optimizer.batch_size, dtype=bool))
        try:
            loss = denoising_loss(view, batch, rng)
            opt.step(collect_grads(loss, list(net.base.items())))
        except NonFiniteError as exc:
            raise NonFiniteError(f"non-finite loss at base iteration {i + 1}") from exc
    net.base.set_frozen(True)
    return net


# -- checkpoints ----------------------------------------------------------------


def net_records(net: ControlledVectorFieldNet, optimizer: AdamW | None = None) -> dict:
    spec = net.spec
    records = {
        "meta/arch": np.array(
            [spec.image_side, spec.hidden, spec.blocks, spec.time_embed], dtype=np.float64
        )
    }
    for name, p in net.base.items():
        records[f"base/{name}"] = p.data
    for name, p in net.control.items():
        records[f"control/{name}"] = p.data
    if optimizer is not None:
        for name, arr in optimizer.state_items():
            records[f"opt/{name}"] = arr
    return records


def load_net(path, control_trainable: bool = True) -> tuple[ControlledVectorFieldNet, dict]:
    """Rebuild a net from a checkpoint; base comes back frozen."""
    records = read_checkpoint(path)
    arch = records["meta/arch"]
    spec = NetSpec(
        image_side=int(arch[0]), hidden=int(arch[1]), blocks=int(arch[2]), time_embed=int(arch[3])
    )
    net = ControlledVectorFieldNet.build(spec, seed=0)
    for name, p in net.base.items():
        p.data = records[f"base/{name}"].reshape(p.data.shape)
    for name, p in net.control.items():
        p.data = records[f"control/{name}"].reshape(p.data.shape)
    net.base.set_frozen(True)
    net.control.set_frozen(not control_trainable)
    opt_state = {k[len("opt/") :]: v for k, v in records.items() if k.startswith("opt/")}
    return net, opt_state


# -- full run ----------------------------------------------------------------------


def write_losses_csv(path, records: list[LossRecord], append: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["iter", "stage", "loss_d", "loss_a", "loss_total"])
        for r in records:
            loss_a = "" if r.loss_a is None else repr(r.loss_a)
            writer.writerow([r.iteration, r.stage, repr(r.loss_d), loss_a, repr(r.total)])


def reference_features(ref_images, extractor: FeatureExtractor) -> Tensor:
    """Features of the reference images, computed once per run and cached."""
    feats = extract_features(extractor, [np.asarray(img) for img in ref_images])
    return feats.detach()


def run_training(
    cfg: TrainConfig,
    dataset_dir,
    ref_dir=None,
    out_dir=".",
    stage: str = "both",
    base_ckpt=None,
    spec: NetSpec | None = None,
) -> dict:
    """Execute base pretraining plus the requested stages; write artifacts.

    Writes stage1.ckpt / stage2.ckpt and losses.csv under out_dir. Fully
    deterministic given cfg.seed. Returns the paths written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, masks = load_dataset(dataset_dir)
    side = images[0].shape[0]
    images = np.stack([img.reshape(-1) for img in images])
    masks = np.stack([m.reshape(-1) for m in masks])
    spec = spec or NetSpec(image_side=side)
    if spec.image_side != side:
        raise ValueError(f"dataset images are {side}x{side} but net expects {spec.image_side}")

    extractor = FeatureExtractor(side=side, out_dim=cfg.kernel.dim_scale, seed=DEFAULT_FEATURE_SEED)
    ref_features = None
    if stage in ("2", "both"):
        if ref_dir is None:
            raise ValueError("stage 2 requires a reference image directory")
        ref_images = load_dataset(ref_dir)[0]
        if cfg.reward_kind == "mmd" and len(ref_images) < 2:
            raise ValueError("the unbiased reward needs at least 2 reference images")
        ref_features = reference_features(ref_images, extractor)

    written = {}
    records: list[LossRecord] = []

    if stage in ("1", "both"):
        if base_ckpt is not None:
            net, _ = load_net(base_ckpt)
        else:
            net = pretrain_base(images, cfg, spec)
        optimizer = AdamW(net.control, cfg.optimizer)
        state = TrainState(
            net=net,
            optimizer=optimizer,
            iteration=0,
            stage=1,
            rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])),
        )
        for i in range(cfg.stage1_iters):
            record = train_step(state, draw_batch(images, masks, cfg, state.rng), cfg)
            if (i + 1) % cfg.log_every == 0:
                records.append(record)
        written["stage1"] = out_dir / "stage1.ckpt"
        write_checkpoint(written["stage1"], net_records(net, optimizer))

    if stage in ("2", "both"):
        stage1_path = written.get("stage1", out_dir / "stage1.ckpt")
        if not Path(stage1_path).exists():
            raise FileNotFoundError(f"stage 2 needs {stage1_path} (run stage 1 first)")
        net, opt_state = load_net(stage1_path)
        optimizer = AdamW(net.control, cfg.optimizer)
        if opt_state:
            optimizer.load_state(opt_state)
        state = TrainState(
            net=net,
            optimizer=optimizer,
            iteration=cfg.stage1_iters,
            stage=2,
            rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 2])),
        )
        for i in range(cfg.stage2_iters):
            record = train_step(
                state,
                draw_batch(images, masks, cfg, state.rng),
                cfg,
                ref_features=ref_features,
                extractor=extractor,
            )
            if (i + 1) % cfg.log_every == 0:
                records.append(record)
        written["stage2"] = out_dir / "stage2.ckpt"
        write_checkpoint(written["stage2"], net_records(net, optimizer))

    written["losses"] = out_dir / "losses.csv"
    # a lone stage-2 run extends the stage-1 log so split and combined runs
    # leave the same file behind
    write_losses_csv(written["losses"], records, append=(stage == "2"))
    return written
