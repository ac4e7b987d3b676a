import numpy as np
import pytest
import torch

from crowdface.errors import ConfigError, ShapeMismatchError
from crowdface.explain import (
    FilterGrid,
    OcclusionConfig,
    average_heatmap,
    default_scales,
    filter_responses,
    load_heatmap,
    occlusion_map,
    render_overlay,
    save_filter_grid,
    save_filter_montage,
    save_heatmap,
)
from crowdface.model import ArchitectureConfig, build

from conftest import patch_mask


class PixelReader:
    """Toy model whose score is exactly the intensity of one pixel."""

    def __init__(self, r, c, side=16):
        self.r, self.c, self.side = r, c, side

    def predict(self, px):
        arr = np.asarray(px)
        if arr.ndim == 2:
            return float(arr[self.r, self.c])
        return arr[:, self.r, self.c].astype(np.float64)


def brute_force_map(model, pixels, scale, stride, fill):
    """Independent oracle: occlude every stride position one at a time."""
    side = pixels.shape[0]
    base = float(model.predict(pixels))
    heat = np.zeros_like(pixels)
    for r in range(0, side - scale + 1, stride):
        for c in range(0, side - scale + 1, stride):
            occluded = pixels.copy()
            occluded[r : r + scale, c : c + scale] = fill
            delta = abs(float(model.predict(occluded)) - base)
            heat[r : r + scale, c : c + scale] += delta
    return heat


def zeroed_model(side=16):
    model = build(ArchitectureConfig(segments=((1, 4),), fc_layers=1, fc_width=8),
                  side=side, seed=0)
    with torch.no_grad():
        for p in model.module.parameters():
            p.zero_()
    return model


class TestOcclusionMap:
    def test_matches_brute_force_exactly_on_toy_model(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (16, 16))
        model = PixelReader(5, 9)
        cfg = OcclusionConfig(scales=(4,), stride=1, fill_value=0.5)
        got = occlusion_map(model, img, cfg)
        oracle = brute_force_map(model, img, 4, 1, 0.5)
        assert np.array_equal(got.values, oracle)

    def test_matches_brute_force_on_real_tiny_network(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (16, 16))
        model = build(ArchitectureConfig(segments=((1, 4),), fc_layers=1, fc_width=8),
                      side=16, seed=4)
        cfg = OcclusionConfig(scales=(4,), stride=2, fill_value=0.5)
        got = occlusion_map(model, img, cfg)
        oracle = brute_force_map(model, img, 4, 2, 0.5)
        assert np.array_equal(got.values, oracle)

    def test_nonzero_exactly_within_box_reach(self):
        img = np.random.default_rng(2).uniform(0.1, 0.9, (16, 16))
        r, c, s = 5, 9, 4
        cfg = OcclusionConfig(scales=(s,), stride=1, fill_value=0.5)
        heat = occlusion_map(PixelReader(r, c), img, cfg).values
        reach = np.zeros((16, 16), dtype=bool)
        reach[max(0, r - s + 1) : r + s, max(0, c - s + 1) : c + s] = True
        assert np.all(heat[reach] > 0)
        assert np.all(heat[~reach] == 0)

    def test_constant_model_yields_zero_map(self):
        img = np.random.default_rng(3).uniform(0, 1, (16, 16))
        heat = occlusion_map(zeroed_model(16), img,
                             OcclusionConfig(scales=(8, 4), stride=2))
        assert np.all(heat.values == 0)
        assert heat.total_mass == 0.0

    def test_scale_order_is_irrelevant(self):
        img = np.random.default_rng(4).uniform(0, 1, (16, 16))
        model = build(ArchitectureConfig(segments=((1, 4),), fc_layers=1, fc_width=8),
                      side=16, seed=5)
        a = occlusion_map(model, img, OcclusionConfig(scales=(8, 4, 2)))
        b = occlusion_map(model, img, OcclusionConfig(scales=(2, 4, 8)))
        assert np.array_equal(a.values, b.values)

    def test_box_bigger_than_image_rejected(self):
        img = np.zeros((16, 16))
        with pytest.raises(ConfigError):
            occlusion_map(PixelReader(0, 0), img, OcclusionConfig(scales=(32,)))

    def test_default_scales(self):
        assert default_scales(128) == (64, 32, 16, 8)

    def test_localizes_planted_patch(self, synth_bundle):
        # single fine scale: at least half the heat mass must fall within the
        # patch dilated by one box side
        manifest = synth_bundle.manifest
        box = manifest["side"] // 8
        cfg = OcclusionConfig(scales=(box,))
        img = synth_bundle.val_set.pixels[0]
        heat = occlusion_map(synth_bundle.model, img, cfg)
        mask = patch_mask(manifest, dilate=box)
        assert heat.total_mass > 0
        assert heat.values[mask].sum() / heat.total_mass >= 0.5


class TestAverageHeatmap:
    def test_singleton_equals_single_map(self):
        img = np.random.default_rng(5).uniform(0, 1, (16, 16))
        model = PixelReader(3, 3)
        cfg = OcclusionConfig(scales=(4,), stride=2)
        heat, face = average_heatmap(model, [img], cfg)
        assert np.array_equal(heat.values, occlusion_map(model, img, cfg).values)
        assert np.array_equal(face, img)

    def test_duplicated_image_is_idempotent(self):
        img = np.random.default_rng(6).uniform(0, 1, (16, 16))
        model = PixelReader(7, 2)
        cfg = OcclusionConfig(scales=(4,), stride=2)
        once, face1 = average_heatmap(model, [img], cfg)
        twice, face2 = average_heatmap(model, [img, img], cfg)
        assert np.array_equal(once.values, twice.values)
        assert np.array_equal(face1, face2)
        assert twice.n_images == 2

    def test_permutation_invariant_bitwise(self):
        rng = np.random.default_rng(7)
        imgs = [rng.uniform(0, 1, (16, 16)) for _ in range(5)]
        model = build(ArchitectureConfig(segments=((1, 4),), fc_layers=1, fc_width=8),
                      side=16, seed=6)
        cfg = OcclusionConfig(scales=(4,), stride=2)
        a, fa = average_heatmap(model, imgs, cfg)
        b, fb = average_heatmap(model, imgs[::-1], cfg)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(fa, fb)

    def test_mixed_sides_rejected(self):
        with pytest.raises(ShapeMismatchError):
            average_heatmap(PixelReader(0, 0), [np.zeros((16, 16)), np.zeros((8, 8))])

    def test_set_level_localization(self, synth_bundle):
        manifest = synth_bundle.manifest
        box = manifest["side"] // 8
        cfg = OcclusionConfig(scales=(box,))
        heat, _ = average_heatmap(synth_bundle.model,
                                  synth_bundle.val_set.pixels[:20], cfg)
        mask = patch_mask(manifest, dilate=box)
        assert heat.values[mask].sum() / heat.values.sum() >= 0.5


class TestFilterResponses:
    def small_model(self, seed=0):
        return build(ArchitectureConfig(segments=((2, 4), (1, 6)), fc_layers=1,
                                        fc_width=8), side=16, seed=seed)

    def test_zero_weights_zero_maps(self):
        grid = filter_responses(zeroed_model(16),
                                np.random.default_rng(1).uniform(0, 1, (16, 16)))
        assert np.all(grid.values == 0)

    def test_shapes_follow_pooling_arithmetic(self):
        model = self.small_model()
        img = np.random.default_rng(2).uniform(0, 1, (16, 16))
        # conv layers 0 and 1 sit before the first pool; conv 2 after one pool
        for layer, (nf, s) in {0: (4, 16), 1: (4, 16), 2: (6, 8)}.items():
            grid = filter_responses(model, img, layer=layer)
            assert grid.values.shape == (nf, s, s)
            assert grid.filter_count == nf
            assert grid.layer == layer

    def test_default_is_last_conv_layer(self):
        model = self.small_model()
        img = np.random.default_rng(3).uniform(0, 1, (16, 16))
        auto = filter_responses(model, img)
        explicit = filter_responses(model, img, layer=2)
        assert np.array_equal(auto.values, explicit.values)

    def test_invalid_layer_lists_valid_indices(self):
        model = self.small_model()
        with pytest.raises(ConfigError) as err:
            filter_responses(model, np.zeros((16, 16)), layer=7)
        assert "0..2" in str(err.value)

    def test_patch_focus_of_trained_filters(self, synth_bundle):
        # at least one last-layer filter responds more per unit area inside
        # the planted patch than outside (maps upsampled to image scale);
        # probe the brightest-patch validation image
        manifest = synth_bundle.manifest
        side = manifest["side"]
        by_id = {r["image_id"]: r["patch_mean"] for r in manifest["images"]}
        val = synth_bundle.val_set
        idx = int(np.argmax([by_id[i] for i in val.ids]))
        img = val.pixels[idx]
        grid = filter_responses(synth_bundle.model, img)
        mask = patch_mask(manifest)
        found = False
        for f in range(grid.filter_count):
            up = np.kron(np.abs(grid.values[f]),
                         np.ones((side // grid.values.shape[1],) * 2))
            inside = up[mask].mean()
            outside = up[~mask].mean()
            if inside > outside:
                found = True
                break
        assert found


class TestRenderOverlay:
    def test_zero_heatmap_is_face_tinted_by_zero_color(self, tmp_path):
        from matplotlib import colormaps
        from PIL import Image

        face = np.random.default_rng(8).uniform(0, 1, (16, 16))
        path = render_overlay(np.zeros((16, 16)), face, tmp_path / "o.png")
        got = np.asarray(Image.open(path)).astype(np.float64) / 255.0
        zero_color = colormaps["jet"](np.zeros((16, 16)))[..., :3]
        expected = 0.5 * np.repeat(face[..., None], 3, axis=2) + 0.5 * zero_color
        assert np.allclose(got, expected, atol=1 / 255 + 1e-9)

    def test_constant_heatmap_same_as_zero(self, tmp_path):
        face = np.random.default_rng(9).uniform(0, 1, (16, 16))
        a = render_overlay(np.zeros((16, 16)), face, tmp_path / "a.png")
        b = render_overlay(np.full((16, 16), 3.7), face, tmp_path / "b.png")
        assert a.read_bytes() == b.read_bytes()

    def test_deterministic_bytes(self, tmp_path):
        rng = np.random.default_rng(10)
        heat = rng.uniform(0, 2, (16, 16))
        face = rng.uniform(0, 1, (16, 16))
        a = render_overlay(heat, face, tmp_path / "a.png")
        b = render_overlay(heat, face, tmp_path / "b.png")
        assert a.read_bytes() == b.read_bytes()

    def test_shape_mismatch(self, tmp_path):
        with pytest.raises(ShapeMismatchError):
            render_overlay(np.zeros((8, 8)), np.zeros((16, 16)), tmp_path / "x.png")


class TestExports:
    def test_heatmap_grid_round_trip(self, tmp_path):
        values = np.random.default_rng(11).uniform(0, 1, (12, 12))
        save_heatmap(values, tmp_path / "h.csv")
        assert np.allclose(load_heatmap(tmp_path / "h.csv"), values)

    def test_filter_grid_npz_and_montage(self, tmp_path):
        grid = FilterGrid(values=np.random.default_rng(12).uniform(-1, 1, (5, 8, 8)),
                          layer=1)
        save_filter_grid(grid, tmp_path / "g.npz")
        with np.load(tmp_path / "g.npz") as data:
            assert int(data["layer"]) == 1
            assert sorted(k for k in data.files if k.startswith("filter_")) == [
                f"filter_{i:03d}" for i in range(5)
            ]
        path = save_filter_montage(grid, tmp_path / "m.png")
        from PIL import Image

        w, h = Image.open(path).size
        assert w > 8 and h > 8
