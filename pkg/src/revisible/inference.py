"""Inference and dataset evaluation for trained checkpoints.

Direct mode runs the network on the noisy image, nothing else. Weighted
mode also builds the masked volume, gathers the blind-spot image with
the mapper, and mixes both outputs as (blind + lam * visible) / (lam + 1).
Evaluation corrupts clean images with per-image seeds derived from the
file name (not the manifest position) so reports are order-independent.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, checkpoint_digest
from .dataio import DatasetManifest, load_manifest, read_image
from .errors import ConfigError, ShapeError
from .losses import weighted_combination
from .mapper import map_blind_spots
from .masking import MaskGridSpec, make_global_masked_volume
from .metrics import QualityScore, psnr, ssim
from .network import forward
from .noise import NoiseSpec, corrupt
from .tensor import Tensor, narrow_batch, no_grad

EVAL_MODES = ("direct", "weighted")


def denoise_direct(ckpt: Checkpoint, noisy: Tensor) -> Tensor:
    """Plain no-gradient forward pass; values are left unclamped."""
    if noisy.data.shape[1] != ckpt.net_config.in_channels:
        raise ShapeError(
            f"checkpoint expects {ckpt.net_config.in_channels} channel(s), "
            f"input has {noisy.data.shape[1]}"
        )
    return forward(ckpt.params, noisy, track_gradients=False)


def denoise_weighted(ckpt: Checkpoint, noisy: Tensor, lam: float, grid_s: int = 2) -> Tensor:
    """Convex mix of the blind-mapped output and the direct output.

    Large lam recovers the direct output; the result is pixelwise between
    the two paths.
    """
    if lam <= 0:
        raise ConfigError(f"weighted inference requires lam > 0, got {lam}")
    spec = MaskGridSpec(grid_s)
    direct = denoise_direct(ckpt, noisy)
    with no_grad():
        volume = make_global_masked_volume(noisy, spec)
        out = forward(ckpt.params, Tensor(volume.stacked()), track_gradients=False)
        layers = [narrow_batch(out, l, 1) for l in range(spec.layers)]
        blind = map_blind_spots(layers, spec).image
        return weighted_combination(blind, direct, lam)


@dataclass
class EvalResult:
    path: str
    repeat: int
    score: QualityScore


@dataclass
class EvalReport:
    results: list[EvalResult]
    mean_psnr: float
    mean_ssim: float
    noise: str
    mode: str
    ckpt_digest: str

    def to_tsv(self) -> str:
        lines = [
            f"# noise={self.noise}\tmode={self.mode}\tcheckpoint={self.ckpt_digest}",
            "# path\trepeat\tpsnr_db\tssim",
        ]
        for r in self.results:
            lines.append(f"{r.path}\t{r.repeat}\t{r.score.psnr_db:.6f}\t{r.score.ssim:.6f}")
        lines.append(f"aggregate\t{len(self.results)}\t{self.mean_psnr:.6f}\t{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"


def _image_seed(user_seed: int, entry: str, repeat: int) -> int:
    name_digest = int.from_bytes(
        hashlib.blake2b(entry.encode("utf-8"), digest_size=8).digest(), "little"
    )
    ss = np.random.SeedSequence([user_seed, name_digest, repeat])
    return int(ss.generate_state(1, np.uint64)[0])


def evaluate(
    ckpt: Checkpoint,
    clean_manifest: DatasetManifest | str | Path,
    noise_spec: NoiseSpec,
    seed: int,
    mode: str = "direct",
    repeats: int = 1,
    lam: float = 20.0,
    grid_s: int = 2,
) -> EvalReport:
    """Corrupt, denoise, and score every manifest image ``repeats`` times.

    Scores use the clamped real-valued outputs; the checkpoint is never
    mutated. Per-image corruption seeds come from the entry name and
    repeat index, so reordering the manifest cannot change any score.
    """
    if mode not in EVAL_MODES:
        raise ConfigError(f"unknown eval mode {mode!r}, expected one of {EVAL_MODES}")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    if not isinstance(clean_manifest, DatasetManifest):
        clean_manifest = load_manifest(clean_manifest)
    if len(clean_manifest) == 0:
        raise ConfigError("evaluation manifest is empty")

    results: list[EvalResult] = []
    for entry, path in zip(clean_manifest.entries, clean_manifest.paths()):
        clean = read_image(path).pixels
        for repeat in range(repeats):
            noisy, _ = corrupt(clean, noise_spec, _image_seed(seed, entry, repeat))
            if mode == "direct":
                denoised = denoise_direct(ckpt, noisy)
            else:
                denoised = denoise_weighted(ckpt, noisy, lam=lam, grid_s=grid_s)
            score = QualityScore(psnr_db=psnr(clean, denoised), ssim=ssim(clean, denoised))
            results.append(EvalResult(path=entry, repeat=repeat, score=score))

    return EvalReport(
        results=results,
        mean_psnr=float(np.mean([r.score.psnr_db for r in results])),
        mean_ssim=float(np.mean([r.score.ssim for r in results])),
        noise=noise_spec.describe(),
        mode=mode,
        ckpt_digest=checkpoint_digest(ckpt),
    )


def write_report(report: EvalReport, path) -> None:
    Path(path).write_text(report.to_tsv(), encoding="utf-8")
