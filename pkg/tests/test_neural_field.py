"""Lateral-interaction field: kernel construction, Euler dynamics, peak
detection, and the PGM dump."""

import numpy as np
import pytest
from scipy.special import expit

from evtheremin.events import Resolution
from evtheremin.neural_field import (
    Field,
    FieldParams,
    KernelParams,
    LateralKernel,
    detect_peaks,
    field_step,
    field_to_pgm,
    make_kernel,
    selective_params,
    tracking_params,
)

CHIP = Resolution(86, 65)


def gaussian_input(res, cx, cy, amp=6.0, sigma=2.0):
    ys, xs = np.mgrid[0 : res.height, 0 : res.width]
    return amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))


def run_steps(field, s, kernel, n):
    for _ in range(n):
        field = field_step(field, s, kernel)
    return field


class TestParams:
    def test_field_param_validation(self):
        with pytest.raises(ValueError):
            FieldParams(tau=0)
        with pytest.raises(ValueError):
            FieldParams(dt=0)
        with pytest.raises(ValueError):
            FieldParams(tau=1.0, dt=2.0)
        with pytest.raises(ValueError):
            FieldParams(h=0.0)
        with pytest.raises(ValueError):
            FieldParams(beta=-1.0)
        with pytest.raises(ValueError):
            FieldParams(tie_break=-0.1)

    def test_kernel_param_validation(self):
        with pytest.raises(ValueError):
            KernelParams(sigma_exc=6.0, sigma_inh=3.0)
        with pytest.raises(ValueError):
            KernelParams(sigma_exc=3.0, sigma_inh=3.0)
        with pytest.raises(ValueError):
            KernelParams(c_exc=-1.0)
        with pytest.raises(ValueError):
            KernelParams(g_inh=-0.5)

    def test_presets(self):
        fp, kp = tracking_params()
        assert kp.g_inh == 0.0
        fp, kp = selective_params()
        assert kp.g_inh > 0.0 and fp.tie_break > 0.0


class TestMakeKernel:
    def test_center_value_is_amplitude_difference(self):
        k = make_kernel(KernelParams())
        r = k.weights.shape[0] // 2
        assert k.weights[r, r] == pytest.approx(15.0 - 10.0)

    def test_default_radius_covers_three_inhibitory_sigmas(self):
        k = make_kernel(KernelParams(sigma_inh=6.0))
        assert k.weights.shape == (37, 37)

    def test_radially_symmetric(self):
        k = make_kernel(KernelParams(), radius=8).weights
        np.testing.assert_allclose(k, k[::-1, :])
        np.testing.assert_allclose(k, k[:, ::-1])
        np.testing.assert_allclose(k, k.T)

    def test_excitatory_center_inhibitory_surround(self):
        k = make_kernel(KernelParams()).weights
        r = k.shape[0] // 2
        assert k[r, r] > 0
        assert k[r, r + 10] < 0

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            LateralKernel(np.zeros((4, 5)))
        with pytest.raises(ValueError):
            make_kernel(KernelParams(), radius=0)


class TestFieldBasics:
    def test_at_rest(self):
        f = Field.at_rest(CHIP)
        assert f.u.shape == (65, 86)
        assert np.all(f.u == -5.0)
        assert f.resolution == CHIP

    def test_rate_is_sigmoid_of_activation(self):
        f = Field.at_rest(Resolution(4, 3), FieldParams(beta=4.0))
        f.u[:] = 0.0
        assert np.all(f.rate() == 0.5)
        f.u[:] = 2.0
        assert f.rate()[0, 0] == pytest.approx(expit(8.0))

    def test_step_is_pure(self):
        f = Field.at_rest(Resolution(10, 8))
        before = f.u.copy()
        kernel = make_kernel(KernelParams(), radius=2)
        g = field_step(f, np.ones((8, 10)), kernel)
        np.testing.assert_array_equal(f.u, before)
        assert g is not f

    def test_input_shape_checked(self):
        f = Field.at_rest(Resolution(10, 8))
        kernel = make_kernel(KernelParams(), radius=2)
        with pytest.raises(ValueError):
            field_step(f, np.ones((10, 8)), kernel)


class TestLinearizedDynamics:
    """With a zero-amplitude kernel the update is a scalar leaky
    integrator, so the fixed point and decay rate have closed forms."""

    def kernel(self):
        return make_kernel(KernelParams(c_exc=0.0, c_inh=0.0), radius=2)

    def test_fixed_point_is_rest_plus_input(self):
        params = FieldParams(tau=10, h=-5, dt=1)
        res = Resolution(6, 5)
        f = Field.at_rest(res, params)
        s = np.full((5, 6), 2.0)
        f = run_steps(f, s, self.kernel(), 400)
        np.testing.assert_allclose(f.u, -3.0, atol=1e-12)

    def test_geometric_decay_ratio(self):
        params = FieldParams(tau=10, h=-5, dt=1)
        f = Field.at_rest(Resolution(6, 5), params)
        f.u[2, 2] = 3.0
        zero = np.zeros((5, 6))
        g = field_step(f, zero, self.kernel())
        gg = field_step(g, zero, self.kernel())
        # deviation from rest shrinks by exactly (1 - dt/tau) per step
        assert (g.u[2, 2] + 5.0) == pytest.approx(0.9 * 8.0)
        assert (gg.u[2, 2] + 5.0) == pytest.approx(0.9**2 * 8.0)


class TestPeakDynamics:
    def test_localized_input_ignites_then_self_sustains(self):
        fp, kp = FieldParams(), KernelParams()
        kernel = make_kernel(kp)
        s = gaussian_input(CHIP, 43, 32)
        f = run_steps(Field.at_rest(CHIP, fp), s, kernel, 150)
        peaks = detect_peaks(f, threshold=0.0)
        assert len(peaks) == 1
        assert np.hypot(peaks[0].x - 43, peaks[0].y - 32) < 2.0

        # drop the input to 20 percent; the peak must hold its position
        f = run_steps(f, 0.2 * s, kernel, 60)
        peaks = detect_peaks(f, threshold=0.0)
        assert len(peaks) == 1
        assert np.hypot(peaks[0].x - 43, peaks[0].y - 32) < 2.0

    def test_single_step_impulse_never_ignites(self):
        fp, kp = FieldParams(), KernelParams()
        kernel = make_kernel(kp)
        s = gaussian_input(CHIP, 43, 32)
        f = field_step(Field.at_rest(CHIP, fp), s, kernel)
        zero = np.zeros((CHIP.height, CHIP.width))
        horizon = int(5 * fp.tau / fp.dt)
        for _ in range(horizon):
            f = field_step(f, zero, kernel)
            assert not detect_peaks(f, threshold=0.0)

    def test_two_distant_peaks_coexist_without_global_inhibition(self):
        fp, kp = tracking_params()
        kernel = make_kernel(kp)
        s = gaussian_input(CHIP, 20, 32) + gaussian_input(CHIP, 60, 32)
        f = run_steps(Field.at_rest(CHIP, fp), s, kernel, 150)
        peaks = detect_peaks(f, threshold=0.0, min_separation=6.0)
        assert len(peaks) == 2
        xs = sorted(p.x for p in peaks)
        assert abs(xs[0] - 20) < 2.0 and abs(xs[1] - 60) < 2.0

    def test_global_inhibition_selects_single_winner(self):
        fp, kp = selective_params()
        kernel = make_kernel(kp)
        s = gaussian_input(CHIP, 20, 32) + gaussian_input(CHIP, 60, 32)
        f = run_steps(Field.at_rest(CHIP, fp), s, kernel, 120)
        peaks = detect_peaks(f, threshold=0.0, min_separation=6.0)
        assert len(peaks) == 1
        # equal inputs: the scan-order bias must pick the earlier cell
        assert abs(peaks[0].x - 20) < 2.0 and abs(peaks[0].y - 32) < 2.0

    def test_interior_translation_equivariance(self):
        fp, kp = FieldParams(), KernelParams()
        kernel = make_kernel(kp)
        base = run_steps(
            Field.at_rest(CHIP, fp), gaussian_input(CHIP, 30, 25), kernel, 120
        )
        moved = run_steps(
            Field.at_rest(CHIP, fp), gaussian_input(CHIP, 35, 28), kernel, 120
        )
        p0 = detect_peaks(base, threshold=0.0)[0]
        p1 = detect_peaks(moved, threshold=0.0)[0]
        assert p1.x - p0.x == pytest.approx(5.0, abs=0.05)
        assert p1.y - p0.y == pytest.approx(3.0, abs=0.05)


class TestDetectPeaks:
    def constructed(self, bumps, res=Resolution(40, 30)):
        f = Field.at_rest(res)
        ys, xs = np.mgrid[0 : res.height, 0 : res.width]
        for cx, cy, amp in bumps:
            f.u = f.u + amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * 2.0**2))
        return f

    def test_centroids_within_half_cell(self):
        f = self.constructed([(10.0, 10.0, 9.0), (30.0, 20.0, 9.0)])
        peaks = detect_peaks(f, threshold=0.0)
        assert len(peaks) == 2
        got = sorted((p.x, p.y) for p in peaks)
        for (gx, gy), (ex, ey) in zip(got, [(10.0, 10.0), (30.0, 20.0)]):
            assert abs(gx - ex) <= 0.5 and abs(gy - ey) <= 0.5

    def test_sorted_by_mass_descending(self):
        f = self.constructed([(10.0, 10.0, 6.0), (30.0, 20.0, 12.0)])
        peaks = detect_peaks(f, threshold=0.0)
        assert peaks[0].mass > peaks[1].mass
        assert abs(peaks[0].x - 30.0) < 1.0

    def test_close_centroids_merge(self):
        f = self.constructed([(14.0, 10.0, 9.0), (20.0, 10.0, 9.0)])
        apart = detect_peaks(f, threshold=0.0, min_separation=0.0)
        merged = detect_peaks(f, threshold=0.0, min_separation=10.0)
        if len(apart) == 2:
            assert len(merged) == 1
            assert abs(merged[0].x - 17.0) < 1.0
            assert merged[0].mass == pytest.approx(sum(p.mass for p in apart))

    def test_diagonal_cells_are_one_region(self):
        f = Field.at_rest(Resolution(8, 8))
        f.u[2, 2] = 1.0
        f.u[3, 3] = 1.0
        assert len(detect_peaks(f, threshold=0.0)) == 1

    def test_threshold_must_exceed_resting_level(self):
        f = Field.at_rest(Resolution(8, 8))
        with pytest.raises(ValueError):
            detect_peaks(f, threshold=-5.0)

    def test_empty_when_subthreshold(self):
        assert detect_peaks(Field.at_rest(Resolution(8, 8)), threshold=0.0) == []


class TestPgmDump:
    def test_frozen_two_by_two(self):
        f = Field.at_rest(Resolution(2, 2))
        f.u = np.array([[0.0, 1.0], [2.0, 3.0]])
        data = field_to_pgm(f)
        assert data == b"P5\n2 2\n65535\n" + bytes(
            [0x00, 0x00, 0x55, 0x55, 0xAA, 0xAA, 0xFF, 0xFF]
        )

    def test_flat_field_renders_zero(self):
        f = Field.at_rest(Resolution(3, 2))
        data = field_to_pgm(f)
        assert data == b"P5\n3 2\n65535\n" + b"\x00" * 12

    def test_size(self):
        f = Field.at_rest(CHIP)
        data = field_to_pgm(f)
        header = f"P5\n{CHIP.width} {CHIP.height}\n65535\n".encode()
        assert len(data) == len(header) + 2 * CHIP.width * CHIP.height
