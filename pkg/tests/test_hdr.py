import math

import numpy as np
import pytest

from sgmnet import hdr
from sgmnet import tensor as T
from sgmnet.hdr import TonemapConfig
from sgmnet.tensor import Tape, Tensor

from conftest import max_rel_err, numeric_grad

# ln(2501) / ln(5001), evaluated with mpmath at 30 digits
T_HALF = 0.9186432718796463


class TestMuLaw:
    def test_endpoints_bitwise(self):
        y = np.array([0.0, 1.0])
        out = hdr.mu_law(y)
        assert out[0] == 0.0 and out[1] == 1.0
        t_out = hdr.mu_law(Tensor(y))
        assert t_out.data[0] == 0.0 and t_out.data[1] == 1.0

    def test_half(self):
        assert math.log(2501.0) / math.log(5001.0) == pytest.approx(T_HALF, abs=1e-15)
        assert hdr.mu_law(np.float64(0.5)) == pytest.approx(T_HALF, abs=1e-15)
        assert float(hdr.mu_law(np.float32(0.5))) == pytest.approx(T_HALF, abs=1e-7)

    def test_tensor_and_array_paths_agree(self, rng):
        y = rng.uniform(size=100)
        assert hdr.mu_law(Tensor(y)).data.tobytes() == hdr.mu_law(y).tobytes()

    def test_strictly_increasing(self):
        grid = np.linspace(0, 1, 10_000)
        assert np.all(np.diff(hdr.mu_law(grid)) > 0)

    def test_negative_input_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            hdr.mu_law(np.array([-1e-3, 0.5]))

    def test_slack_is_clamped(self):
        out = hdr.mu_law(np.array([-5e-7, 1 + 5e-7]))
        assert out[0] == 0.0 and out[1] == 1.0

    def test_invalid_mu(self):
        with pytest.raises(ValueError):
            TonemapConfig(mu=0)


class TestLoss:
    def test_zero_on_equal(self, rng):
        y = rng.uniform(size=(1, 3, 4, 4))
        assert hdr.loss(Tensor(y), y).item() == 0.0

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(2, 1, 3, 4, 4))
        assert hdr.loss(Tensor(a), b).item() == pytest.approx(hdr.loss(Tensor(b), a).item(), rel=1e-15)

    def test_single_pixel(self):
        expected = (T_HALF - 1.0) ** 2
        assert expected == pytest.approx(0.0066189172104491, abs=1e-15)
        got = hdr.loss(Tensor(np.array([[[[0.5]]]])), np.array([[[[1.0]]]])).item()
        assert got == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            hdr.loss(Tensor(np.zeros((1, 3, 2, 2))), np.zeros((1, 3, 2, 3)))

    def test_gradient_matches_finite_differences(self, rng):
        y = Tensor(rng.uniform(0.05, 0.95, size=(1, 3, 3, 3)), requires_grad=True)
        gt = rng.uniform(size=(1, 3, 3, 3))
        with Tape() as tape:
            out = hdr.loss(y, gt)
        tape.backward(out)
        fd = numeric_grad(lambda: hdr.loss(Tensor(y.data), gt).item(), y.data, h=1e-4)
        assert max_rel_err(y.grad, fd) <= 1e-6


class TestPSNR:
    def test_identical_is_infinite(self, rng):
        y = rng.uniform(size=(3, 4, 4))
        assert hdr.psnr_linear(y, y) == math.inf
        assert hdr.psnr_tonemapped(y, y) == math.inf

    def test_mse_hundredth_is_twenty_db(self):
        assert hdr.psnr_from_mse(0.01) == 20.0
        assert hdr.psnr_linear(np.array([0.1]), np.array([0.0])) == pytest.approx(20.0, abs=1e-12)

    def test_tonemapped_constants(self):
        got = hdr.psnr_tonemapped(np.full((3, 2, 2), 0.5), np.full((3, 2, 2), 1.0))
        assert got == pytest.approx(10 * math.log10(1 / (T_HALF - 1) ** 2), abs=1e-9)
        assert got == pytest.approx(21.79213051042021, abs=1e-9)

    def test_tonemapped_is_linear_psnr_of_tonemapped(self, rng):
        a, b = rng.uniform(size=(2, 3, 8, 8))
        assert hdr.psnr_tonemapped(a, b) == hdr.psnr_linear(hdr.mu_law(a), hdr.mu_law(b))

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            hdr.psnr_linear(np.zeros(3), np.zeros(4))


class TestLift:
    def test_white_unit_exposure(self):
        np.testing.assert_array_equal(hdr.lift(np.ones((3, 2, 2)), 1.0), 1.0)

    def test_black(self):
        np.testing.assert_array_equal(hdr.lift(np.zeros((3, 2, 2)), 0.37), 0.0)

    def test_half_at_four_seconds(self):
        # 0.5 ** 2.2 / 4 evaluated with mpmath at 30 digits
        assert hdr.lift(np.float64(0.5), 4.0) == pytest.approx(0.054409410206007759, abs=1e-16)

    def test_rejects_bad_exposure(self):
        with pytest.raises(ValueError, match="positive"):
            hdr.lift(np.ones(3), 0.0)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            hdr.lift(np.array([1.1]), 1.0)
