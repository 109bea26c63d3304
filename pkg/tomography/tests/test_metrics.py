import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from tomography import metrics
from tomography.geometry import ImageGrid
from tomography.metrics import MetricsReport


def loop_ssim(a, b, peak):
    """SSIM 2D con ventana gaussiana 11×11 explícita y bordes replicados."""
    offsets = np.arange(-5, 6)
    g = np.exp(-offsets**2 / (2 * 1.5**2))
    kernel = np.outer(g, g)
    kernel /= kernel.sum()
    pa, pb = np.pad(a, 5, mode='edge'), np.pad(b, 5, mode='edge')
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    values = np.zeros(a.shape)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            wa, wb = pa[i:i + 11, j:j + 11], pb[i:i + 11, j:j + 11]
            mu_a, mu_b = (kernel * wa).sum(), (kernel * wb).sum()
            var_a = (kernel * wa * wa).sum() - mu_a**2
            var_b = (kernel * wb * wb).sum() - mu_b**2
            cov = (kernel * wa * wb).sum() - mu_a * mu_b
            values[i, j] = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(values.mean())


class RelativeErrorTests(SimpleTestCase):
    def test_identities(self):
        gt = np.random.default_rng(0).random((8, 8))
        self.assertEqual(metrics.relative_error(gt, gt), 0.0)
        self.assertEqual(metrics.relative_error(np.zeros_like(gt), gt), 1.0)
        self.assertAlmostEqual(metrics.relative_error(2 * gt, gt), 1.0)

    def test_zero_reference_is_undefined(self):
        with self.assertRaises(ValueError):
            metrics.relative_error(np.ones(4), np.zeros(4))

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            metrics.relative_error(np.ones(4), np.ones(5))


class PSNRTests(SimpleTestCase):
    def test_identical_is_infinite(self):
        gt = np.ones((4, 4))
        self.assertEqual(metrics.psnr(gt, gt), math.inf)

    def test_known_value(self):
        self.assertAlmostEqual(metrics.psnr(np.full((4, 4), 0.5), np.ones((4, 4))), 6.0206, places=4)

    def test_explicit_peak(self):
        self.assertAlmostEqual(metrics.psnr(np.full(4, 0.5), np.ones(4), peak=2.0), 20 * math.log10(4), places=10)

    def test_zero_peak_is_rejected(self):
        with self.assertRaises(ValueError):
            metrics.psnr(np.ones(4), np.zeros(4))


class SSIMTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(42)
        self.gt = rng.random((32, 32))
        self.noisy = self.gt + 0.1 * rng.standard_normal((32, 32))

    def test_identical_is_one(self):
        self.assertAlmostEqual(metrics.ssim(self.gt, self.gt), 1.0, places=12)

    def test_matches_explicit_window(self):
        peak = float(self.gt.max())
        self.assertAlmostEqual(metrics.ssim(self.noisy, self.gt), loop_ssim(self.noisy, self.gt, peak), delta=1e-6)

    def test_symmetric_with_fixed_peak(self):
        self.assertAlmostEqual(
            metrics.ssim(self.noisy, self.gt, peak=1.0), metrics.ssim(self.gt, self.noisy, peak=1.0), places=12
        )

    def test_bounded(self):
        for x in (self.noisy, np.zeros_like(self.gt), -self.gt, 1 - self.gt):
            value = metrics.ssim(x, self.gt)
            self.assertTrue(-1.0 <= value <= 1.0, value)
        self.assertLess(metrics.ssim(self.noisy, self.gt), 1.0)

    def test_single_slice_volume_uses_2d_window(self):
        image = ImageGrid.from_array(self.gt)
        noisy = image.with_values(self.noisy.ravel())
        self.assertAlmostEqual(metrics.ssim(noisy, image), metrics.ssim(self.noisy, self.gt), places=12)

    def test_volume(self):
        rng = np.random.default_rng(1)
        gt = rng.random((12, 12, 12))
        value = metrics.ssim(gt + 0.05 * rng.standard_normal(gt.shape), gt)
        self.assertTrue(0.0 < value < 1.0)
        self.assertEqual(metrics.ssim_map(gt, gt).shape, gt.shape)


class MetricsReportTests(SimpleTestCase):
    def test_evaluate_reconstruction_equal_to_reference(self):
        gt = ImageGrid.from_array(np.random.default_rng(3).random((16, 16)))
        report = metrics.evaluate(gt, gt)
        self.assertEqual(report.re, 0.0)
        self.assertEqual(report.psnr, math.inf)
        self.assertAlmostEqual(report.ssim, 1.0, places=12)
        self.assertEqual(report.computed_over, metrics.FULL_VOLUME)

    def test_text_round_trip(self):
        report = MetricsReport(re=0.125, psnr=31.5, ssim=0.875, peak=1.0)
        self.assertEqual(MetricsReport.from_text(report.to_text()), report)
        self.assertIn("psnr_db = 31.5", report.to_text())

    def test_csv_row(self):
        report = MetricsReport(re=np.float64(0.5), psnr=math.inf, ssim=0.25, peak=2.0)
        self.assertEqual(report.to_csv_row(), "0.5,inf,0.25")
        parsed = MetricsReport.from_csv_row(report.to_csv_row(), peak=2.0)
        self.assertEqual(parsed, report)

    def test_malformed_text(self):
        with self.assertRaises(ValueError):
            MetricsReport.from_text("re = 0.1\n")
        with self.assertRaises(ValueError):
            MetricsReport.from_csv_row("0.1,0.2")

    def test_values_are_plain_floats(self):
        gt = np.random.default_rng(4).random((16, 16))
        report = metrics.evaluate(gt * 0.9, gt)
        self.assertIs(type(report.re), float)
        assert_allclose(report.re, 0.1, rtol=1e-12)
