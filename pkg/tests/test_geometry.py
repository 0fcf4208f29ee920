import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unsupdepth.dataio import Rect, SyntheticSceneSpec, generate_synthetic_pair
from unsupdepth.errors import ConfigurationError
from unsupdepth.geometry import (
    Calibration,
    depth_to_disparity,
    disparity_to_depth,
    inverse_warp,
    linearized_warp,
    photometric_loss,
    smoothness_loss,
    total_loss,
)
from unsupdepth.gradcheck import check_function, warp_knot_filter
from unsupdepth.tensor import Tape, Tensor, backward


def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def plane_pair(cal, disparity, size=(24, 64), **kw):
    spec = SyntheticSceneSpec(layout=[], background_depth=cal.fB / disparity, image_size=size,
                              calibration=cal, integer_disparity=float(disparity).is_integer(), **kw)
    return generate_synthetic_pair(spec)


class TestInverseWarp:
    def test_identity(self, rng):
        right = t64(rng.standard_normal((3, 5, 8)))
        warped, mask = inverse_warp(right, t64(np.zeros((5, 8))))
        np.testing.assert_array_equal(warped.data, right.data)
        assert mask.all()

    def test_unit_shift(self, rng):
        right = rng.standard_normal((2, 4, 7))
        warped, mask = inverse_warp(t64(right), t64(np.ones((4, 7))))
        np.testing.assert_array_equal(warped.data[..., :-1], right[..., 1:])
        assert not mask[:, -1].any()

    def test_resolution_mismatch(self, rng):
        with pytest.raises(ConfigurationError):
            inverse_warp(t64(rng.standard_normal((1, 4, 8))), t64(np.zeros((4, 6))))

    def test_negative_samples_invalid(self):
        warped, mask = inverse_warp(t64(np.ones((1, 1, 5))), t64(np.full((1, 5), -2.0)))
        np.testing.assert_array_equal(mask[0], [False, False, True, True, True])

    def test_gradient_matches_differences(self, rng):
        right = t64(rng.standard_normal((2, 4, 9)), grad=True)
        disp = t64(rng.uniform(0, 3, (4, 9)), grad=True)
        near = warp_knot_filter(disp.data[None], 9, 1e-3)
        r = rng.standard_normal((2, 4, 9))
        from unsupdepth import ops
        res = check_function("warp", lambda a, d: ops.sum(ops.mul(inverse_warp(a, d)[0], r)), [right, disp],
                             exclude=lambda i, k: i == 1 and near(k))
        assert res.passed, res.line()


class TestPhotometric:
    def test_identical(self, rng):
        x = t64(rng.standard_normal((3, 4, 4)))
        loss, empty = photometric_loss(x, x, np.ones((4, 4)))
        assert loss.item() == 0.0 and not empty

    @pytest.mark.parametrize("c", [0.1, -0.7])
    def test_constant_offset(self, rng, c):
        # squared difference summed over channels, so 3 channels give 3*c^2
        w = rng.standard_normal((3, 4, 5))
        loss, _ = photometric_loss(t64(w + c), t64(w), np.ones((4, 5)))
        assert loss.item() == pytest.approx(3 * c**2, rel=1e-12)

    def test_single_channel_offset(self, rng):
        w = rng.standard_normal((1, 4, 5))
        loss, _ = photometric_loss(t64(w + 0.3), t64(w), np.ones((4, 5)))
        assert loss.item() == pytest.approx(0.09, rel=1e-12)

    def test_empty_mask_contributes_zero(self, rng):
        x = t64(rng.standard_normal((1, 3, 4)))
        loss, empty = photometric_loss(x, t64(x.data + 1), np.zeros((3, 4)))
        assert empty and loss.item() == 0.0

    @pytest.mark.parametrize("true_d", [2.0, 3.4, 5.7])
    def test_true_shift_is_best_candidate(self, cal, true_d):
        s = plane_pair(cal, true_d, quantize=False)
        left, right = t64(s.left), t64(s.right)
        losses = []
        for cand in range(9):
            warped, mask = inverse_warp(right, t64(np.full(s.resolution, float(cand))))
            # score every candidate on the same pixels
            common = np.ones(s.resolution, bool)
            common[:, s.resolution[1] - 9:] = False
            losses.append(photometric_loss(left, warped, common & (mask > 0))[0].item())
        at_truth = photometric_loss(left, inverse_warp(right, t64(s.gt_disparity))[0], common)
        assert at_truth[0].item() <= min(losses) + 1e-12
        assert int(np.argmin(losses)) in (int(np.floor(true_d)), int(np.ceil(true_d)))


class TestSmoothness:
    def test_constant(self):
        assert smoothness_loss(t64(np.full((5, 6), 3.3))).item() == 0.0

    def test_two_by_two_ramp(self):
        # horizontal pairs differ by 1, vertical pairs by 0
        assert smoothness_loss(t64([[0.0, 1.0], [0.0, 1.0]])).item() == pytest.approx(0.5, abs=1e-15)

    def test_gradcheck(self, rng):
        d = t64(rng.standard_normal((5, 6)), grad=True)
        res = check_function("smooth", smoothness_loss, [d], tol=1e-6)
        assert res.passed, res.line()

    def test_too_small(self):
        with pytest.raises(ConfigurationError):
            smoothness_loss(t64(np.zeros((1, 5))))


class TestTotal:
    def test_gamma_zero(self, rng):
        l, r = t64(rng.standard_normal((3, 4, 6))), t64(rng.standard_normal((3, 4, 6)))
        out = total_loss(l, r, t64(rng.uniform(0, 2, (4, 6))), gamma=0.0)
        assert out.total.item() == out.recons.item()

    def test_constant_disparity(self, rng):
        l, r = t64(rng.standard_normal((3, 4, 6))), t64(rng.standard_normal((3, 4, 6)))
        out = total_loss(l, r, t64(np.full((4, 6), 1.5)), gamma=0.01)
        assert out.total.item() == out.recons.item()

    def test_negative_gamma(self, rng):
        x = t64(rng.standard_normal((1, 3, 3)))
        with pytest.raises(ConfigurationError):
            total_loss(x, x, t64(np.zeros((3, 3))), gamma=-1)

    def test_single_pixel_perturbation(self, rng):
        l, r = t64(rng.standard_normal((3, 5, 9))), t64(rng.standard_normal((3, 5, 9)))
        d = t64(np.full((5, 9), 1.3) + rng.uniform(0, 0.4, (5, 9)), grad=True)
        with Tape() as tape:
            loss = total_loss(l, r, d, 0.01).total
        backward(tape, loss)
        h = 1e-6
        for (i, j) in [(0, 0), (2, 4), (4, 7)]:
            dp, dm = d.data.copy(), d.data.copy()
            dp[i, j] += h
            dm[i, j] -= h
            num = (total_loss(l, r, t64(dp), 0.01).total.item() - total_loss(l, r, t64(dm), 0.01).total.item()) / (2 * h)
            assert abs(num - d.grad[i, j]) / max(abs(num), 1e-8) < 1e-4


class TestLinearizedWarp:
    def test_zero_increment_matches_warp(self, rng):
        right = rng.standard_normal((2, 4, 10))
        d = rng.uniform(0, 3, (4, 10))
        exact = inverse_warp(t64(right), t64(d))[0].data
        np.testing.assert_array_equal(linearized_warp(right, d, d), exact)

    def test_exact_on_ramp(self, rng):
        slopes = rng.uniform(-1, 1, (1, 4, 1))
        right = slopes * np.arange(20, dtype=float)[None, None, :] + rng.standard_normal((1, 4, 1))
        d0 = rng.uniform(1, 3, (4, 20))
        d1 = d0 + 0.25
        lin = linearized_warp(right, d0, d1)
        true = inverse_warp(t64(right), t64(d1))[0].data
        np.testing.assert_allclose(lin[..., 1:14], true[..., 1:14], atol=1e-12)

    def test_quarter_pixel_error_bounded_by_curvature(self):
        a = 0.01
        x = np.arange(40, dtype=float)
        right = np.tile(a * x**2, (3, 1))[None]
        d0 = np.full((3, 40), 2.0)
        lin = linearized_warp(right, d0, d0 + 0.25)
        true = inverse_warp(t64(right), t64(d0 + 0.25))[0].data
        # the interpolated image bends between samples, so the bound uses twice the curvature
        curvature = 2 * a
        err = np.abs(lin - true)[..., 2:30]
        assert err.max() <= 2 * curvature * 0.25**2 + 1e-12

    def test_gradient_agrees_with_true_loss_on_ramp(self, rng):
        from unsupdepth import ops
        left = rng.standard_normal((2, 4, 16))
        slopes = rng.uniform(-1, 1, (2, 4, 1))
        right = slopes * np.arange(16, dtype=float)[None, None, :]
        d = rng.uniform(1.1, 2.9, (4, 16))
        mask = np.zeros((4, 16), bool)
        mask[:, 1:11] = True
        h = 1e-6
        lin_p = linearized_warp(right, d, d + h)
        lin_m = linearized_warp(right, d, d - h)
        g_lin = (((lin_p - left) ** 2 - (lin_m - left) ** 2) / (2 * h)).sum(axis=0)
        dt = t64(d, grad=True)
        with Tape() as tape:
            warped, _ = inverse_warp(t64(right), dt)
            loss = ops.sum(ops.mul(ops.square(ops.sub(warped, t64(left))), mask[None].astype(float)))
        backward(tape, loss)
        rel = np.abs(g_lin[mask] - dt.grad[mask]) / np.maximum(np.abs(dt.grad[mask]), 1e-8)
        assert rel.max() < 1e-5


class TestDepth:
    def test_reference_value(self):
        assert disparity_to_depth(np.array([27.0]), Calibration(100.0, 0.54))[0] == pytest.approx(2.0, rel=1e-15)

    def test_zero_disparity_clamps_to_max(self, cal):
        assert disparity_to_depth(np.zeros(3), cal, (1.0, 50.0)).tolist() == [50.0] * 3

    def test_clamp_min(self, cal):
        assert disparity_to_depth(np.array([1e6]), cal, (1.0, 50.0))[0] == 1.0

    def test_bad_clamp(self, cal):
        with pytest.raises(ConfigurationError):
            disparity_to_depth(np.ones(2), cal, (5.0, 1.0))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1.0, 50.0))
    def test_round_trip(self, depth):
        cal = Calibration(100.0, 0.54)
        back = disparity_to_depth(depth_to_disparity(np.array([depth]), cal), cal)[0]
        assert back == pytest.approx(depth, rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 200.0), st.floats(0.0, 200.0))
    def test_monotone(self, a, b):
        cal = Calibration(100.0, 0.54)
        da, db = disparity_to_depth(np.array([a, b]), cal)
        if a <= b:
            assert da >= db
