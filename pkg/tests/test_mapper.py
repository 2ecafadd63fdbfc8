"""Mask mapper: gather semantics, adjoint scatter, gradient flow."""

import numpy as np
import pytest

from revisible.errors import ShapeError
from revisible.mapper import map_blind_spots, mapper_backward_scatter
from revisible.masking import MaskGridSpec, interpolate_neighbors, make_global_masked_volume
from revisible.tensor import Tensor, backward, gradcheck, square, sum_all


def rand_image(shape, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(0, 1, shape).astype(np.float32))


class TestMapBlindSpots:
    def test_constant_layers_tile(self):
        spec = MaskGridSpec(2)
        layers = [Tensor(np.full((1, 1, 2, 2), v, np.float32)) for v in (10, 20, 30, 40)]
        out = map_blind_spots(layers, spec).image.data[0, 0]
        np.testing.assert_array_equal(out, [[10.0, 20.0], [30.0, 40.0]])

    def test_identity_network_gives_interpolation(self):
        img = rand_image((1, 1, 8, 8), seed=1)
        spec = MaskGridSpec(2)
        vol = make_global_masked_volume(img, spec)
        mapped = map_blind_spots(vol.layers, spec).image
        expected = interpolate_neighbors(img).data
        np.testing.assert_allclose(mapped.data, expected, atol=1e-6)

    def test_broadcast_identity(self):
        img = rand_image((2, 3, 6, 6), seed=2)
        spec = MaskGridSpec(2)
        mapped = map_blind_spots([img] * spec.layers, spec).image
        assert mapped.data.tobytes() == img.data.tobytes()

    def test_provenance_matches_residues(self):
        spec = MaskGridSpec(3)
        layers = [rand_image((1, 1, 9, 9), seed=s) for s in range(9)]
        result = map_blind_spots(layers, spec)
        for r in range(9):
            for c in range(9):
                assert result.provenance[r, c] == (r % 3) * 3 + (c % 3)

    def test_each_output_pixel_has_one_source(self):
        spec = MaskGridSpec(2)
        layers = [rand_image((1, 1, 4, 4), seed=s) for s in range(4)]
        base = map_blind_spots(layers, spec).image.data.copy()
        poked = [layer.data.copy() for layer in layers]
        poked[3][0, 0, 1, 1] += 1.0  # layer (1,1) owns pixel (1,1)
        out = map_blind_spots([Tensor(p) for p in poked], spec).image.data
        delta = np.abs(out - base) > 0
        assert delta.sum() == 1 and delta[0, 0, 1, 1]

    def test_layer_count_error(self):
        with pytest.raises(ShapeError, match="expects 4 layers"):
            map_blind_spots([rand_image((1, 1, 4, 4))] * 3, MaskGridSpec(2))

    def test_layer_shape_error(self):
        layers = [rand_image((1, 1, 4, 4)) for _ in range(3)] + [rand_image((1, 1, 4, 6))]
        with pytest.raises(ShapeError, match="differs"):
            map_blind_spots(layers, MaskGridSpec(2))


class TestScatter:
    def test_ones_scatter_to_residue_classes(self):
        spec = MaskGridSpec(2)
        g = np.ones((1, 1, 4, 4), np.float32)
        scattered = mapper_backward_scatter(g, spec)
        for l, layer_grad in enumerate(scattered):
            mask = np.zeros((4, 4), bool)
            mask[l // 2 :: 2, l % 2 :: 2] = True
            np.testing.assert_array_equal(layer_grad[0, 0][mask], 1.0)
            np.testing.assert_array_equal(layer_grad[0, 0][~mask], 0.0)

    def test_scatter_sums_back(self):
        spec = MaskGridSpec(3)
        g = np.random.default_rng(3).standard_normal((2, 1, 6, 6)).astype(np.float32)
        scattered = mapper_backward_scatter(g, spec)
        np.testing.assert_allclose(sum(scattered), g, atol=1e-7)

    def test_map_of_scatter_roundtrip(self):
        spec = MaskGridSpec(2)
        g = np.random.default_rng(4).standard_normal((1, 2, 4, 4)).astype(np.float32)
        scattered = [Tensor(arr) for arr in mapper_backward_scatter(g, spec)]
        out = map_blind_spots(scattered, spec).image
        np.testing.assert_array_equal(out.data, g)


class TestMapperGradients:
    def test_gradcheck_through_map(self):
        spec = MaskGridSpec(2)
        params = {
            f"layer{l}": Tensor(
                np.random.default_rng(10 + l).standard_normal((1, 1, 4, 4)).astype(np.float32),
                requires_grad=True,
            )
            for l in range(4)
        }

        def fn(p):
            mapped = map_blind_spots([p[f"layer{l}"] for l in range(4)], spec).image
            return sum_all(square(mapped))

        report = gradcheck(fn, params, step=1e-3, tol=1e-3)
        assert report.passed, str(report)

    def test_backward_routes_only_blind_positions(self):
        spec = MaskGridSpec(2)
        layers = [rand_image((1, 1, 4, 4), seed=20 + l) for l in range(4)]
        for layer in layers:
            layer.requires_grad = True
        loss = sum_all(map_blind_spots(layers, spec).image)
        grads = backward(loss, {f"l{i}": t for i, t in enumerate(layers)})
        for l in range(4):
            mask = np.zeros((4, 4), bool)
            mask[l // 2 :: 2, l % 2 :: 2] = True
            g = grads[f"l{l}"][0, 0]
            np.testing.assert_array_equal(g[mask], 1.0)
            np.testing.assert_array_equal(g[~mask], 0.0)
