"""Self-supervised image denoising with visible blind spots.

Train a convolutional denoiser from single noisy images: a global masker
hides every pixel in exactly one of s*s masked copies, a mask mapper
gathers the blind-spot predictions back into one image, and a re-visible
loss lets the network learn from the raw noisy image through a detached
visible term without collapsing to the identity.
"""

from .checkpoint import AdamState, Checkpoint, load_checkpoint, save_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    FormatError,
    ManifestError,
    RevisibleError,
    ShapeError,
)
from .estimator import SelfSupervisedDenoiser
from .inference import EvalReport, denoise_direct, denoise_weighted, evaluate, write_report
from .losses import (
    LossBreakdown,
    LossConfig,
    casewise_expansion,
    lambda_at,
    loss_case_a,
    loss_case_b,
    revisible_loss,
    weighted_combination,
)
from .mapper import MappedImage, map_blind_spots, mapper_backward_scatter
from .masking import (
    MaskGridSpec,
    MaskedVolume,
    interpolate_neighbors,
    make_global_masked_volume,
    make_random_masked_image,
)
from .metrics import QualityScore, psnr, ssim
from .network import NetConfig, NetworkParams, build_unet, forward
from .noise import NoiseSpec, corrupt, parse_noise_spec
from .tensor import Tensor, backward, gradcheck, no_grad
from .training import TrainerConfig, adam_step, lr_at_epoch, train, train_arrays, train_step

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "EvalReport",
    "FormatError",
    "LossBreakdown",
    "LossConfig",
    "ManifestError",
    "MappedImage",
    "MaskGridSpec",
    "MaskedVolume",
    "NetConfig",
    "NetworkParams",
    "NoiseSpec",
    "QualityScore",
    "RevisibleError",
    "SelfSupervisedDenoiser",
    "ShapeError",
    "Tensor",
    "TrainerConfig",
    "adam_step",
    "backward",
    "build_unet",
    "casewise_expansion",
    "corrupt",
    "denoise_direct",
    "denoise_weighted",
    "evaluate",
    "forward",
    "gradcheck",
    "interpolate_neighbors",
    "lambda_at",
    "load_checkpoint",
    "loss_case_a",
    "loss_case_b",
    "lr_at_epoch",
    "make_global_masked_volume",
    "make_random_masked_image",
    "map_blind_spots",
    "mapper_backward_scatter",
    "no_grad",
    "parse_noise_spec",
    "psnr",
    "revisible_loss",
    "save_checkpoint",
    "ssim",
    "train",
    "train_arrays",
    "train_step",
    "weighted_combination",
    "write_report",
]
