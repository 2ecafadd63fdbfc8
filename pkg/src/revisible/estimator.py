"""Scikit-learn style facade over the self-supervised denoiser.

`SelfSupervisedDenoiser.fit(X)` trains the network on noisy images alone;
`transform(X)` denoises. The class follows the estimator protocol
(`get_params` / `set_params` / `clone`), so it drops into pipelines and
model-selection tooling. Images are (N, C, H, W) stacks or sequences of
(C, H, W) / (H, W) arrays on roughly [0, 1].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ShapeError
from .inference import denoise_direct, denoise_weighted
from .losses import LossConfig
from .metrics import psnr
from .network import NetConfig
from .noise import parse_noise_spec
from .tensor import Tensor
from .training import ABLATION_MODES, TrainerConfig, train_arrays
from .validation import check_image_batch, check_spatial_divisibility


class SelfSupervisedDenoiser(BaseEstimator, TransformerMixin):
    """Denoiser trained from single noisy observations, no clean targets.

    Parameters
    ----------
    epochs : int, training epochs; the visible-term weight ramps from
        ``lambda_start`` to ``lambda_final`` across them.
    batch_size : int, images per optimization step.
    learning_rate : float, initial Adam learning rate (halves every 20
        epochs).
    weight_decay : float, decoupled shrinkage factor per step.
    grid_size : int, masking cell side; ``grid_size**2`` masked copies per
        image.
    patch_size : int, side of the seeded training crops.
    base_channels, depth, leaky_slope : network topology knobs.
    eta : float, weight of the blind-fit regularizer.
    lambda_start, lambda_final : float, endpoints of the visible weight.
    mode : str, training mode; "full" is the method, the others are
        ablation baselines.
    noise : str or None. None (default) means X is already noisy and is
        trained on as-is. A spec string such as "gauss25" treats X as
        clean [0, 1] images corrupted on the fly, which is the synthetic
        benchmark setting.
    inference : "direct" or "weighted"; weighted mixes the blind-mapped
        output with the direct one at weight ``lambda_final``.
    random_state : int seed; fixes initialization, crops, and corruption.

    Attributes
    ----------
    checkpoint_ : trained network plus optimizer state.
    loss_history_ : list of (epoch, step, total, rev, reg) tuples.
    """

    def __init__(
        self,
        epochs: int = 30,
        batch_size: int = 4,
        learning_rate: float = 3e-4,
        weight_decay: float = 1e-8,
        grid_size: int = 2,
        patch_size: int = 64,
        base_channels: int = 16,
        depth: int = 2,
        leaky_slope: float = 0.1,
        eta: float = 1.0,
        lambda_start: float = 2.0,
        lambda_final: float = 20.0,
        mode: str = "full",
        noise: str | None = None,
        inference: str = "direct",
        random_state: int = 0,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.grid_size = grid_size
        self.patch_size = patch_size
        self.base_channels = base_channels
        self.depth = depth
        self.leaky_slope = leaky_slope
        self.eta = eta
        self.lambda_start = lambda_start
        self.lambda_final = lambda_final
        self.mode = mode
        self.noise = noise
        self.inference = inference
        self.random_state = random_state

    def _trainer_config(self, in_channels: int) -> TrainerConfig:
        if self.mode not in ABLATION_MODES:
            raise ShapeError(f"mode must be one of {ABLATION_MODES}, got {self.mode!r}")
        return TrainerConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.learning_rate,
            weight_decay=self.weight_decay,
            grid_s=self.grid_size,
            patch=self.patch_size,
            seed=self.random_state,
            loss=LossConfig(
                eta=self.eta,
                lambda_s=self.lambda_start,
                lambda_f=self.lambda_final,
                total_epochs=self.epochs,
            ),
            ablation_mode=self.mode,
            net=NetConfig(
                in_channels=in_channels,
                base_channels=self.base_channels,
                depth=self.depth,
                leaky_slope=self.leaky_slope,
            ),
        )

    def fit(self, X, y=None):
        """Train on a stack of noisy images (clean images if ``noise`` is set)."""
        batch = check_image_batch(X)
        if batch.shape[2] < self.patch_size or batch.shape[3] < self.patch_size:
            raise ShapeError(
                f"images {batch.shape[2:]} are smaller than patch_size {self.patch_size}"
            )
        config = self._trainer_config(in_channels=batch.shape[1])
        corrupt_with = parse_noise_spec(self.noise) if self.noise is not None else None
        history: list[tuple[int, int, float, float, float]] = []

        def on_step(epoch, step, bd, lr):
            history.append((epoch, step, bd.total_value, bd.rev_value, bd.reg_value))

        self.checkpoint_ = train_arrays(
            [batch[i : i + 1] for i in range(batch.shape[0])],
            config,
            corrupt_with=corrupt_with,
            on_step=on_step,
        )
        self.loss_history_ = history
        self.n_channels_ = batch.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Denoise images; output matches the input stack's shape."""
        self._check_fitted()
        batch = check_image_batch(X)
        if batch.shape[1] != self.n_channels_:
            raise ShapeError(
                f"fitted on {self.n_channels_} channel(s), got {batch.shape[1]}"
            )
        check_spatial_divisibility(batch, self.depth)
        outputs = []
        for i in range(batch.shape[0]):
            noisy = Tensor(batch[i : i + 1])
            if self.inference == "weighted":
                out = denoise_weighted(
                    self.checkpoint_, noisy, lam=self.lambda_final, grid_s=self.grid_size
                )
            else:
                out = denoise_direct(self.checkpoint_, noisy)
            outputs.append(out.data)
        return np.concatenate(outputs, axis=0)

    def predict(self, X) -> np.ndarray:
        return self.transform(X)

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of the denoised X against clean references y."""
        denoised = self.transform(X)
        clean = check_image_batch(y, name="y")
        if clean.shape != denoised.shape:
            raise ShapeError(f"reference shape {clean.shape} != denoised {denoised.shape}")
        return float(np.mean([psnr(clean[i], denoised[i]) for i in range(clean.shape[0])]))

    def _check_fitted(self) -> None:
        if not hasattr(self, "checkpoint_"):
            raise ShapeError("estimator is not fitted; call fit(X) first")
