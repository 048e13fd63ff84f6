"""Tile planning arithmetic, window complementarity, and blend transparency."""

import gc
import weakref

import numpy as np
import pytest

from gpdenoise.tiling import (
    TilePlan,
    blend_profile,
    blend_window,
    cosine_ramp,
    plan_tiles,
    tiled_inference,
)


def identity_restore(tile_clip):
    return tile_clip[tile_clip.shape[0] // 2]


class TestPlanTiles:
    def test_exact_single_tile(self):
        plan = plan_tiles(640, 640, 640, 64)
        assert plan.tiles == [(0, 0, 640, 640)]

    def test_two_tile_axis_arithmetic(self):
        # stride 576: origins {0, 576}; 576 + 640 = 1216 exactly
        plan = plan_tiles(640, 1216, 640, 64)
        xs = sorted({t[0] for t in plan.tiles})
        assert xs == [0, 576]
        assert all(t[2] <= 1216 for t in plan.tiles)

    def test_uhd_grid_covers_and_overlaps(self):
        plan = plan_tiles(2160, 3840, 640, 64)
        ys = sorted({t[1] for t in plan.tiles})
        xs = sorted({t[0] for t in plan.tiles})
        assert ys == [0, 576, 1152, 1520]
        # last column shifts to abut the right edge
        assert xs[-1] == 3200
        assert all(b - a <= 576 for a, b in zip(xs, xs[1:]))
        covered = np.zeros((2160, 3840), dtype=bool)
        for x0, y0, x1, y1 in plan.tiles:
            covered[y0:y1, x0:x1] = True
        assert covered.all()
        # adjacent tiles overlap by >= overlap pixels
        for a, b in zip(xs, xs[1:]):
            assert a + 640 - b >= 64
        for a, b in zip(ys, ys[1:]):
            assert a + 640 - b >= 64

    def test_small_image_single_tile_fallback(self):
        plan = plan_tiles(100, 80, 640, 64)
        assert plan.tiles == [(0, 0, 80, 100)]

    def test_overlap_must_be_smaller_than_tile(self):
        with pytest.raises(ValueError):
            plan_tiles(640, 640, 64, 64)

    def test_deterministic(self):
        a = plan_tiles(1000, 1300, 256, 32)
        b = plan_tiles(1000, 1300, 256, 32)
        assert a.tiles == b.tiles


class TestBlendWindow:
    def test_interior_is_one(self):
        w = blend_window(128, 128, 16)
        assert w[40:88, 40:88].min() == 1.0
        assert w[40:88, 40:88].max() == 1.0

    def test_profile_symmetric(self):
        p = blend_profile(96, 24)
        np.testing.assert_allclose(p, p[::-1], atol=1e-12)

    def test_strictly_positive(self):
        # 1-D profiles carry the 1e-3 floor; the separable product keeps the
        # window strictly positive everywhere (floor^2 at the corners)
        assert blend_profile(64, 16).min() >= 1e-3
        w = blend_window(64, 64, 16)
        assert w.min() >= 1e-6
        assert w.min() > 0.0

    def test_separable(self):
        w = blend_window(32, 48, 8)
        py = blend_profile(32, 8)
        px = blend_profile(48, 8)
        np.testing.assert_allclose(w, np.outer(py, px), atol=1e-12)

    def test_abutting_ramps_sum_to_one(self):
        # cos^2 + sin^2 = 1 on the discrete ramp
        for n in (8, 17, 64):
            rise = cosine_ramp(n)
            fall = rise[::-1]
            np.testing.assert_allclose(rise + fall, 1.0, atol=1e-6)


class TestTiledInference:
    def make_clip(self, h, w, t=5, c=3, seed=0):
        rng = np.random.default_rng(seed)
        return rng.uniform(0, 1, size=(t, c, h, w)).astype(np.float64)

    def test_single_tile_equals_direct(self):
        clip = self.make_clip(64, 64)
        plan = plan_tiles(64, 64, 64, 8)
        out = tiled_inference(identity_restore, clip, plan)
        np.testing.assert_allclose(out, identity_restore(clip), atol=1e-6)

    def test_identity_model_transparency(self):
        clip = self.make_clip(96, 160)
        plan = plan_tiles(96, 160, 48, 16)
        out = tiled_inference(identity_restore, clip, plan)
        np.testing.assert_allclose(out, clip[2], atol=1e-6)

    def test_order_independence(self):
        clip = self.make_clip(96, 96)
        plan = plan_tiles(96, 96, 48, 16)
        reversed_plan = TilePlan(
            tiles=list(reversed(plan.tiles)),
            tile_size=plan.tile_size,
            overlap=plan.overlap,
            height=plan.height,
            width=plan.width,
        )
        a = tiled_inference(identity_restore, clip, plan)
        b = tiled_inference(identity_restore, clip, reversed_plan)
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_every_pixel_covered(self):
        clip = self.make_clip(100, 132)
        plan = plan_tiles(100, 132, 48, 16)
        weight = np.zeros((100, 132))
        window = np.ones((plan.tile_height, plan.tile_width))
        for x0, y0, x1, y1 in plan.tiles:
            weight[y0:y1, x0:x1] += window[: y1 - y0, : x1 - x0]
        assert weight.min() >= 1

    def test_shape_mismatch_names_tile(self):
        clip = self.make_clip(64, 64)
        plan = plan_tiles(64, 64, 32, 8)

        def bad_restore(tile_clip):
            return tile_clip[2, :, :16, :16]

        with pytest.raises(ValueError, match=r"tile \(0, 0, 32, 32\)"):
            tiled_inference(bad_restore, clip, plan)

    def test_sequential_memory_residency(self):
        # outputs from earlier tiles must not stay alive once the next tile runs
        clip = self.make_clip(96, 96)
        plan = plan_tiles(96, 96, 48, 16)
        live_refs = []
        in_flight = {"now": 0, "max": 0}

        def tracking_restore(tile_clip):
            in_flight["now"] += 1
            in_flight["max"] = max(in_flight["max"], in_flight["now"])
            gc.collect()
            alive = sum(1 for ref in live_refs if ref() is not None)
            assert alive <= 1, "previous tile output retained during next tile"
            out = tile_clip[2].copy()
            live_refs.append(weakref.ref(out))
            in_flight["now"] -= 1
            return out

        tiled_inference(tracking_restore, clip, plan)
        assert in_flight["max"] == 1

    def test_no_overlap_plan(self):
        clip = self.make_clip(96, 96)
        plan = plan_tiles(96, 96, 48, 0)
        out = tiled_inference(identity_restore, clip, plan)
        np.testing.assert_allclose(out, clip[2], atol=1e-6)
