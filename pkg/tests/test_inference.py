"""Inference modes and dataset evaluation."""

import numpy as np
import pytest

from revisible.checkpoint import AdamState, Checkpoint, FORMAT_VERSION
from revisible.dataio import ImageFile, write_image
from revisible.errors import ConfigError, ShapeError
from revisible.inference import (
    denoise_direct,
    denoise_weighted,
    evaluate,
    write_report,
)
from revisible.network import NetConfig, build_unet
from revisible.noise import NoiseSpec
from revisible.tensor import Tensor

from helpers import make_texture


@pytest.fixture(scope="module")
def ckpt():
    params = build_unet(NetConfig(base_channels=4, depth=1), seed=0)
    return Checkpoint(
        format_version=FORMAT_VERSION,
        net_config=params.config,
        params=params,
        adam=AdamState.initialize(params),
        epoch=0,
    )


def noisy_image(seed=0, size=16):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(0, 1, (1, 1, size, size)).astype(np.float32))


class TestDenoiseDirect:
    def test_shape_preserved(self, ckpt):
        out = denoise_direct(ckpt, noisy_image())
        assert out.data.shape == (1, 1, 16, 16)

    def test_deterministic(self, ckpt):
        a = denoise_direct(ckpt, noisy_image(1))
        b = denoise_direct(ckpt, noisy_image(1))
        assert a.data.tobytes() == b.data.tobytes()

    def test_channel_mismatch(self, ckpt):
        with pytest.raises(ShapeError, match="channel"):
            denoise_direct(ckpt, Tensor(np.zeros((1, 3, 16, 16), np.float32)))

    def test_does_not_build_graph(self, ckpt):
        out = denoise_direct(ckpt, noisy_image(2))
        assert not out.requires_grad and out._parents == ()


class TestDenoiseWeighted:
    def test_large_lambda_matches_direct(self, ckpt):
        noisy = noisy_image(3)
        weighted = denoise_weighted(ckpt, noisy, lam=1e6)
        direct = denoise_direct(ckpt, noisy)
        np.testing.assert_allclose(weighted.data, direct.data, atol=1e-4)

    def test_pixelwise_between_paths(self, ckpt):
        noisy = noisy_image(4)
        from revisible.mapper import map_blind_spots
        from revisible.masking import MaskGridSpec, make_global_masked_volume
        from revisible.network import forward

        spec = MaskGridSpec(2)
        vol = make_global_masked_volume(noisy, spec)
        blind = map_blind_spots(
            [forward(ckpt.params, layer, track_gradients=False) for layer in vol.layers],
            spec,
        ).image.data
        direct = denoise_direct(ckpt, noisy).data
        out = denoise_weighted(ckpt, noisy, lam=3.0).data
        lo = np.minimum(blind, direct) - 1e-6
        hi = np.maximum(blind, direct) + 1e-6
        assert (out >= lo).all() and (out <= hi).all()

    def test_rejects_nonpositive_lambda(self, ckpt):
        with pytest.raises(ConfigError):
            denoise_weighted(ckpt, noisy_image(), lam=0.0)


class TestEvaluate:
    def make_dataset(self, tmp_path, count=2):
        names = []
        for i in range(count):
            name = f"clean{i}.pgm"
            write_image(tmp_path / name, ImageFile.from_array(make_texture(i, 16)))
            names.append(name)
        manifest = tmp_path / "clean.txt"
        manifest.write_text("\n".join(names) + "\n")
        return manifest

    def test_score_count_and_aggregate(self, ckpt, tmp_path):
        manifest = self.make_dataset(tmp_path)
        spec = NoiseSpec("gaussian_fixed", sigma_8bit=25.0)
        report = evaluate(ckpt, manifest, spec, seed=0, mode="direct", repeats=1)
        assert len(report.results) == 2
        assert report.mean_psnr == pytest.approx(
            float(np.mean([r.score.psnr_db for r in report.results]))
        )

    def test_repeats_multiply_scores(self, ckpt, tmp_path):
        manifest = self.make_dataset(tmp_path)
        spec = NoiseSpec("gaussian_fixed", sigma_8bit=25.0)
        report = evaluate(ckpt, manifest, spec, seed=0, repeats=3)
        assert len(report.results) == 6

    def test_same_seed_same_report(self, ckpt, tmp_path):
        manifest = self.make_dataset(tmp_path)
        spec = NoiseSpec("gaussian_fixed", sigma_8bit=25.0)
        a = evaluate(ckpt, manifest, spec, seed=5)
        b = evaluate(ckpt, manifest, spec, seed=5)
        assert a.to_tsv() == b.to_tsv()

    def test_scores_invariant_to_manifest_order(self, ckpt, tmp_path):
        manifest = self.make_dataset(tmp_path)
        reversed_manifest = tmp_path / "rev.txt"
        lines = manifest.read_text().strip().splitlines()
        reversed_manifest.write_text("\n".join(reversed(lines)) + "\n")
        spec = NoiseSpec("gaussian_fixed", sigma_8bit=25.0)
        fwd = evaluate(ckpt, manifest, spec, seed=1)
        rev = evaluate(ckpt, reversed_manifest, spec, seed=1)
        fwd_scores = {r.path: r.score.psnr_db for r in fwd.results}
        rev_scores = {r.path: r.score.psnr_db for r in rev.results}
        assert fwd_scores == rev_scores

    def test_checkpoint_not_mutated(self, ckpt, tmp_path):
        manifest = self.make_dataset(tmp_path)
        before = {k: t.data.copy() for k, t in ckpt.params.items()}
        evaluate(ckpt, manifest, NoiseSpec("gaussian_fixed", sigma_8bit=25.0), seed=0)
        for name, data in before.items():
            assert ckpt.params[name].data.tobytes() == data.tobytes()

    def test_weighted_mode_runs(self, ckpt, tmp_path):
        manifest = self.make_dataset(tmp_path)
        spec = NoiseSpec("gaussian_fixed", sigma_8bit=25.0)
        report = evaluate(ckpt, manifest, spec, seed=0, mode="weighted", lam=20.0)
        assert report.mode == "weighted" and len(report.results) == 2

    def test_tsv_layout(self, ckpt, tmp_path):
        manifest = self.make_dataset(tmp_path)
        spec = NoiseSpec("gaussian_fixed", sigma_8bit=25.0)
        report = evaluate(ckpt, manifest, spec, seed=0)
        out = tmp_path / "report.tsv"
        write_report(report, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("#")
        data_rows = [l for l in lines if not l.startswith("#")]
        assert data_rows[-1].startswith("aggregate\t")
        for row in data_rows[:-1]:
            path, repeat, score_psnr, score_ssim = row.split("\t")
            float(score_psnr), float(score_ssim), int(repeat)

    def test_unknown_mode(self, ckpt, tmp_path):
        manifest = self.make_dataset(tmp_path)
        with pytest.raises(ConfigError, match="mode"):
            evaluate(ckpt, manifest, NoiseSpec("gaussian_fixed", sigma_8bit=25.0),
                     seed=0, mode="fancy")
