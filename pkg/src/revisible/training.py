"""Training loop: masked-volume forward, detached visible pass, loss, Adam.

One step runs, in order: build the global masked volume of every batch
image, stack all layers along the batch axis, forward the stack with
gradients, gather the blind-spot image with the mapper, forward the raw
noisy batch without gradients, evaluate the re-visible loss at the
epoch's lambda, backpropagate, and apply one Adam update with decoupled
weight decay. Ablation modes swap the loss wiring; everything else is
shared.

Determinism contract: every random draw (patch offset, noise field,
random-mask choice) comes from a seed derived only from (global seed,
epoch, index), so two runs with one config are bitwise identical and a
resumed run reproduces an uninterrupted one.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import (
    AdamState,
    Checkpoint,
    FORMAT_VERSION,
    load_checkpoint,
    save_checkpoint,
)
from .dataio import crop_patch, load_manifest, read_image, DatasetManifest
from .errors import ConfigError, ShapeError
from .losses import (
    LossBreakdown,
    LossConfig,
    lambda_at,
    loss_case_a,
    loss_case_b,
    revisible_loss,
)
from .mapper import map_blind_spots
from .masking import MaskGridSpec, make_global_masked_volume, make_random_masked_image
from .network import NetConfig, NetworkParams, build_unet, forward
from .noise import NoiseSpec, corrupt
from .tensor import Tensor, backward, mean_all, mul, narrow_batch, scalar, scale, square, sub, sum_all

ABLATION_MODES = ("full", "gm_only", "rm_only", "rm_plus_v", "loss_case_a", "loss_case_b")

# Stream tags keep the derived seeds of different draw kinds disjoint.
_STREAM_CROP = 0
_STREAM_NOISE = 1
_STREAM_MASK = 2


def derive_seed(*parts: int) -> int:
    """Stable, well-mixed seed from a tuple of non-negative integers."""
    ss = np.random.SeedSequence(list(parts))
    return int(ss.generate_state(1, np.uint64)[0])


def lr_at_epoch(lr0: float, epoch: int) -> float:
    """Learning rate halves every 20 epochs: lr0 * 0.5 ** (epoch // 20)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return lr0 * 0.5 ** (epoch // 20)


@dataclass
class TrainerConfig:
    epochs: int = 100
    batch_size: int = 4
    lr0: float = 3e-4
    weight_decay: float = 1e-8
    grid_s: int = 2
    patch: int = 64
    seed: int = 0
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec("gaussian_fixed", sigma_8bit=25.0))
    loss: LossConfig = field(default_factory=LossConfig)
    ablation_mode: str = "full"
    net: NetConfig = field(default_factory=NetConfig)
    lambda_granularity: str = "epoch"

    def __post_init__(self):
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(
                f"unknown ablation_mode {self.ablation_mode!r}, expected one of {ABLATION_MODES}"
            )
        if self.lambda_granularity not in ("epoch", "step"):
            raise ConfigError(
                f"lambda_granularity must be 'epoch' or 'step', got {self.lambda_granularity!r}"
            )
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.patch % 2**self.net.depth != 0:
            raise ConfigError(
                f"patch size {self.patch} must divide by 2**depth = {2**self.net.depth}"
            )

    def canonical_text(self) -> str:
        """Stable key=value rendering used for the checkpoint digest."""
        items = {
            "ablation_mode": self.ablation_mode,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "grid_s": self.grid_s,
            "lambda_granularity": self.lambda_granularity,
            "lr0": repr(self.lr0),
            "patch": self.patch,
            "seed": self.seed,
            "weight_decay": repr(self.weight_decay),
            "noise": self.noise.describe(),
            "eta": repr(self.loss.eta),
            "lambda_s": repr(self.loss.lambda_s),
            "lambda_f": repr(self.loss.lambda_f),
            "total_epochs": self.loss.total_epochs,
            "in_channels": self.net.in_channels,
            "base_channels": self.net.base_channels,
            "depth": self.net.depth,
            "leaky_slope": repr(self.net.leaky_slope),
        }
        return "\n".join(f"{k} = {items[k]}" for k in sorted(items))

    def digest(self) -> bytes:
        return hashlib.blake2b(self.canonical_text().encode("utf-8"), digest_size=8).digest()


def adam_step(
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
) -> AdamState:
    """One bias-corrected adaptive-moment update, in place on the params.

    Decoupled decay shrinks the parameters by (1 - lr * weight_decay)
    before the moment update, so the tiny decay stays a pure shrinkage.
    """
    state.step += 1
    t = state.step
    # Scalar constants are pinned to float32 so a run resumed from a
    # checkpoint (which stores them as float32) updates bit-identically
    # to an uninterrupted one.
    beta1 = np.float32(state.beta1)
    beta2 = np.float32(state.beta2)
    eps = np.float32(state.eps)
    shrink = np.float32(1.0 - lr * weight_decay)
    correction1 = np.float32(1.0) - beta1 ** np.float32(t)
    correction2 = np.float32(1.0) - beta2 ** np.float32(t)
    for name, tensor in params.items():
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter {name!r} {tensor.data.shape}"
            )
        tensor.data *= shrink
        state.m[name] = beta1 * state.m[name] + (np.float32(1.0) - beta1) * g
        state.v[name] = beta2 * state.v[name] + (np.float32(1.0) - beta2) * (g * g)
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        tensor.data -= np.float32(lr) * m_hat / (np.sqrt(v_hat) + eps)
    return state


def _lambda_for(config: TrainerConfig, epoch: int, step: int, steps_per_epoch: int) -> float:
    if config.lambda_granularity == "epoch":
        return lambda_at(config.loss, epoch)
    total_steps = config.loss.total_epochs * steps_per_epoch
    position = epoch * steps_per_epoch + step
    if total_steps <= 1:
        return config.loss.lambda_s
    frac = min(position / (total_steps - 1), 1.0)
    return config.loss.lambda_s + (config.loss.lambda_f - config.loss.lambda_s) * frac


def _blind_forward(params: NetworkParams, batch: np.ndarray, spec: MaskGridSpec) -> Tensor:
    """Masked-volume forward and mapper gather for a whole batch.

    All s*s layers of all images run through the network as one stacked
    batch (layer-major order), then each layer slice feeds the mapper.
    """
    n = batch.shape[0]
    volumes = [make_global_masked_volume(Tensor(batch[b : b + 1]), spec) for b in range(n)]
    stacked = np.concatenate(
        [volumes[b].layers[l].data for l in range(spec.layers) for b in range(n)], axis=0
    )
    out = forward(params, Tensor(stacked), track_gradients=True)
    layer_views = [narrow_batch(out, l * n, n) for l in range(spec.layers)]
    return map_blind_spots(layer_views, spec).image


def _masked_mse(diff: Tensor, mask: Tensor, count: float) -> Tensor:
    """Mean of diff^2 over the positions where mask is 1."""
    return scale(sum_all(square(mul(diff, mask))), 1.0 / count)


def train_step(
    params: NetworkParams,
    batch: np.ndarray,
    epoch: int,
    config: TrainerConfig,
    adam_state: AdamState,
    rng: np.random.Generator,
    step_in_epoch: int = 0,
    steps_per_epoch: int = 1,
) -> LossBreakdown:
    """One optimization step on a (B, c, h, w) noisy batch."""
    spec = MaskGridSpec(config.grid_s)
    lam = _lambda_for(config, epoch, step_in_epoch, steps_per_epoch)
    eta = config.loss.eta
    mode = config.ablation_mode
    target = Tensor(batch)

    if mode in ("full", "loss_case_a", "loss_case_b"):
        blind = _blind_forward(params, batch, spec)
        visible = forward(params, Tensor(batch), track_gradients=False)
        if mode == "loss_case_b":
            rev = loss_case_b(blind, visible, target, lam)
            reg = mean_all(square(sub(blind, target)))
            total = rev + scale(reg, eta)
            breakdown = LossBreakdown(total=total, rev=rev, reg=reg, lambda_used=lam)
        else:
            breakdown = revisible_loss(blind, visible, target, lam, eta)
    elif mode == "gm_only":
        blind = _blind_forward(params, batch, spec)
        rev = mean_all(square(sub(blind, target)))
        breakdown = LossBreakdown(total=rev, rev=rev, reg=scalar(0.0), lambda_used=0.0)
    elif mode in ("rm_only", "rm_plus_v"):
        n, c, h, w = batch.shape
        masked_list, mask_list = [], []
        for b in range(n):
            masked, mask = make_random_masked_image(
                Tensor(batch[b : b + 1]), spec, int(rng.integers(0, 2**63 - 1))
            )
            masked_list.append(masked.data)
            mask_list.append(np.broadcast_to(mask, (1, c, h, w)))
        out = forward(params, Tensor(np.concatenate(masked_list, axis=0)), track_gradients=True)
        mask_arr = np.concatenate(mask_list, axis=0).astype(batch.dtype)
        mask_tensor = Tensor(mask_arr)
        count = float(mask_arr.sum())
        if mode == "rm_only":
            rev = _masked_mse(sub(out, target), mask_tensor, count)
            breakdown = LossBreakdown(total=rev, rev=rev, reg=scalar(0.0), lambda_used=0.0)
        else:
            # Re-visible loss restricted to the random blind positions, the
            # only pixels the single masked copy supervises.
            visible = forward(params, Tensor(batch), track_gradients=False)
            residual = out + scale(visible, lam) + scale(target, -(lam + 1.0))
            rev = _masked_mse(residual, mask_tensor, count)
            reg = _masked_mse(sub(out, target), mask_tensor, count)
            total = rev + scale(reg, eta)
            breakdown = LossBreakdown(total=total, rev=rev, reg=reg, lambda_used=lam)
    else:  # pragma: no cover - guarded by TrainerConfig validation
        raise ConfigError(f"unknown ablation_mode {mode!r}")

    grads = backward(breakdown.total, params.tensors)
    assert grads is not None
    adam_step(params, grads, adam_state, lr_at_epoch(config.lr0, epoch), config.weight_decay)
    return breakdown


def _run_epochs(
    params: NetworkParams,
    adam: AdamState,
    config: TrainerConfig,
    n_images: int,
    make_example: Callable[[int, int], np.ndarray],
    start_epoch: int = 0,
    on_step: Callable[[int, int, LossBreakdown, float], None] | None = None,
    on_epoch_end: Callable[[int], None] | None = None,
) -> None:
    """Shared epoch/batch loop. ``make_example(epoch, index)`` supplies one
    noisy (1, c, h, w) training example."""
    steps_per_epoch = (n_images + config.batch_size - 1) // config.batch_size
    for epoch in range(start_epoch, config.epochs):
        for step in range(steps_per_epoch):
            lo = step * config.batch_size
            hi = min(lo + config.batch_size, n_images)
            batch = np.concatenate(
                [make_example(epoch, index) for index in range(lo, hi)], axis=0
            )
            rng = np.random.default_rng(derive_seed(config.seed, epoch, step, _STREAM_MASK))
            breakdown = train_step(
                params, batch, epoch, config, adam, rng,
                step_in_epoch=step, steps_per_epoch=steps_per_epoch,
            )
            if on_step is not None:
                on_step(epoch, step, breakdown, lr_at_epoch(config.lr0, epoch))
        if on_epoch_end is not None:
            on_epoch_end(epoch)


def train(
    manifest: DatasetManifest | str | Path,
    config: TrainerConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> Checkpoint:
    """Train on a manifest of clean images, corrupting them on the fly.

    Per-image randomness derives from (seed, epoch, index), so resuming
    from a saved epoch reproduces the uninterrupted run bitwise. Writes
    one checkpoint per epoch plus a tab-separated per-step log under
    ``out_dir``.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    if len(manifest) == 0:
        raise ConfigError("training manifest is empty")
    images = [read_image(p).pixels for p in manifest.paths()]
    channels = images[0].data.shape[1]
    if channels != config.net.in_channels:
        raise ShapeError(
            f"manifest images have {channels} channel(s), network expects {config.net.in_channels}"
        )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config.digest()

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.trainer_config_digest != digest:
            raise ConfigError(
                "resume checkpoint was produced by a different trainer config"
            )
        params, adam, start_epoch = ckpt.params, ckpt.adam, ckpt.epoch + 1
    else:
        params = build_unet(config.net, config.seed)
        adam = AdamState.initialize(params)
        start_epoch = 0

    def make_example(epoch: int, index: int) -> np.ndarray:
        patch = crop_patch(
            images[index], config.patch, derive_seed(config.seed, epoch, index, _STREAM_CROP)
        )
        noisy, _ = corrupt(patch, config.noise, derive_seed(config.seed, epoch, index, _STREAM_NOISE))
        return noisy.data

    log_path = out_dir / "train_log.tsv"
    log_mode = "a" if resume_from is not None else "w"
    with log_path.open(log_mode, encoding="utf-8") as log:

        def on_step(epoch: int, step: int, bd: LossBreakdown, lr: float) -> None:
            log.write(
                f"{epoch}\t{step}\t{bd.total_value:.8f}\t{bd.rev_value:.8f}"
                f"\t{bd.reg_value:.8f}\t{bd.lambda_used:.6f}\t{lr:.8g}\n"
            )

        def on_epoch_end(epoch: int) -> None:
            ckpt = Checkpoint(
                format_version=FORMAT_VERSION,
                net_config=config.net,
                params=params,
                adam=adam,
                epoch=epoch,
                trainer_config_digest=digest,
            )
            save_checkpoint(out_dir / f"ckpt_epoch_{epoch:04d}.ckpt", ckpt)

        _run_epochs(
            params, adam, config, len(images), make_example,
            start_epoch=start_epoch, on_step=on_step, on_epoch_end=on_epoch_end,
        )

    return Checkpoint(
        format_version=FORMAT_VERSION,
        net_config=config.net,
        params=params,
        adam=adam,
        epoch=config.epochs - 1,
        trainer_config_digest=digest,
    )


def train_arrays(
    images: Sequence[np.ndarray],
    config: TrainerConfig,
    corrupt_with: NoiseSpec | None = None,
    on_step: Callable[[int, int, LossBreakdown, float], None] | None = None,
) -> Checkpoint:
    """Train on in-memory images; the estimator facade's entry point.

    By default the images are treated as already noisy and examples are
    seeded patch crops of them. With ``corrupt_with`` set the images are
    treated as clean [0, 1] references and each patch is corrupted on the
    fly, exactly like the manifest driver.
    """
    if len(images) == 0:
        raise ConfigError("no training images given")
    arrays = [np.asarray(img, dtype=np.float32) for img in images]
    for arr in arrays:
        if arr.ndim != 4 or arr.shape[0] != 1:
            raise ShapeError(f"expected (1, c, h, w) images, got shape {arr.shape}")
    channels = arrays[0].shape[1]
    if channels != config.net.in_channels:
        raise ShapeError(
            f"images have {channels} channel(s), network expects {config.net.in_channels}"
        )
    params = build_unet(config.net, config.seed)
    adam = AdamState.initialize(params)

    def make_example(epoch: int, index: int) -> np.ndarray:
        patch = crop_patch(
            Tensor(arrays[index]), config.patch,
            derive_seed(config.seed, epoch, index, _STREAM_CROP),
        )
        if corrupt_with is None:
            return patch.data
        noisy, _ = corrupt(
            patch, corrupt_with, derive_seed(config.seed, epoch, index, _STREAM_NOISE)
        )
        return noisy.data

    _run_epochs(params, adam, config, len(arrays), make_example, on_step=on_step)
    return Checkpoint(
        format_version=FORMAT_VERSION,
        net_config=config.net,
        params=params,
        adam=adam,
        epoch=config.epochs - 1,
        trainer_config_digest=config.digest(),
    )
