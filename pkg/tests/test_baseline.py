import numpy as np
import pytest

from unsupdepth.baseline import (
    HSConfig,
    ProxyLabel,
    consistency_mask,
    hs_energy,
    hs_stereo,
    make_proxy_labels,
    resize_labels,
)
from unsupdepth.dataio import Rect, SyntheticSceneSpec, generate_synthetic_pair
from unsupdepth.errors import ConfigurationError


def plane(cal, d, size=(32, 96), seed=0):
    return generate_synthetic_pair(SyntheticSceneSpec(
        layout=[], background_depth=cal.fB / d, image_size=size, calibration=cal,
        integer_disparity=True, background_seed=seed, frequency_range=(0.02, 0.12)))


def two_plane(cal, seed=0):
    spec = SyntheticSceneSpec(layout=[Rect(cal.fB / 8, (30, 0, 60, 32), texture_seed=seed + 1)],
                              background_depth=cal.fB / 3, image_size=(32, 96), calibration=cal,
                              integer_disparity=True, background_seed=seed)
    return generate_synthetic_pair(spec)


class TestHS:
    def test_identical_images(self, rng):
        img = rng.uniform(-0.5, 0.5, (3, 20, 40))
        assert np.all(hs_stereo(img, img.copy()) == 0)

    def test_textureless(self):
        flat = np.zeros((1, 16, 32))
        np.testing.assert_allclose(hs_stereo(flat, flat.copy()), 0.0, atol=1e-12)

    @pytest.mark.parametrize("d", [2, 4, 6])
    def test_single_plane(self, cal, d):
        s = plane(cal, d)
        est = hs_stereo(s)
        assert np.median(np.abs(est - d)) < 0.25

    def test_energy_non_increasing_per_level(self, cal):
        s = plane(cal, 4)
        _, trace = hs_stereo(s, cfg=HSConfig(warp_iterations=50), return_trace=True)
        assert len(trace.levels) == len(HSConfig().level_sizes(s.resolution))
        for level in trace.levels:
            assert np.all(np.diff(level.energies) <= 0)

    def test_energy_zero_for_exact_match(self, rng):
        img = rng.standard_normal((2, 5, 9))
        assert hs_energy(img, img, np.zeros((5, 9)), 0.1) == 0.0

    def test_pyramid_stops_at_min_size(self):
        sizes = HSConfig(pyramid_levels=6, min_level_size=6).level_sizes((64, 192))
        assert sizes == [(64, 192), (32, 96), (16, 48), (8, 24)]

    @pytest.mark.parametrize("kw", [dict(pyramid_scale=1.0), dict(pyramid_levels=0), dict(gamma_hs=-1.0)])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigurationError):
            HSConfig(**kw)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            hs_stereo(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


class TestProxyLabels:
    def test_oracle_without_holes_is_ground_truth(self, cal):
        s = two_plane(cal)
        labels = make_proxy_labels([s], engine="oracle", holes=False)
        np.testing.assert_array_equal(labels.labels[0].disparity, s.gt_disparity)
        assert labels.labels[0].valid.all() and labels.hole_fraction == 0.0

    def test_holes_cover_occluded_band(self, cal):
        s = two_plane(cal)
        label = make_proxy_labels([s], engine="oracle", holes=True).labels[0]
        # the band hidden from the right view is exactly as wide as the disparity step (8 - 3)
        assert not label.valid[:, 60:65].any()
        assert s.occlusion[:, 60:65].all()

    def test_hole_fraction_matches_occlusion(self, cal):
        scenes = [two_plane(cal, seed) for seed in range(3)]
        labels = make_proxy_labels(scenes, engine="oracle", holes=True)
        occluded = np.mean([s.occlusion.mean() for s in scenes])
        assert abs(labels.hole_fraction - occluded) <= 0.02

    def test_hs_engine_with_holes(self, cal):
        s = two_plane(cal)
        labels = make_proxy_labels([s], engine="hs", holes=True, cfg=HSConfig(warp_iterations=50))
        lab = labels.labels[0]
        assert lab.disparity.shape == s.resolution
        # holes concentrate where the right view cannot see the left
        hole = ~lab.valid
        assert hole[s.occlusion].mean() > hole[~s.occlusion].mean()

    def test_unknown_engine(self, cal):
        with pytest.raises(ConfigurationError):
            make_proxy_labels([two_plane(cal)], engine="sgm")

    def test_consistency_of_matching_maps(self):
        d = np.full((4, 10), 2.0)
        ok, in_frame = consistency_mask(d, d)
        assert ok[:, :8].all() and not in_frame[:, 8:].any()

    def test_resize_labels_scales_values(self):
        lab = ProxyLabel(np.full((8, 16), 4.0), np.ones((8, 16), bool))
        small = resize_labels(lab, (4, 8))
        np.testing.assert_array_equal(small.disparity, 2.0)
        assert small.valid.shape == (4, 8)
