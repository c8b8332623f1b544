import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from rt60track.attribution import (
    AttributionMap,
    completeness_error,
    frequency_average,
    integrated_gradients,
    model_output,
    receptive_window,
    saliency,
)
from rt60track.errors import ArgumentError
from rt60track.neuralnet import CrnnModel


@pytest.fixture(scope="module")
def model():
    m = CrnnModel(seed=11)
    rng = np.random.default_rng(0)
    for _ in range(3):
        m.forward(rng.standard_normal((4, 21, 300)), train=True, rng=rng)
    return m


@pytest.fixture(scope="module")
def spec():
    return np.random.default_rng(5).standard_normal((21, 400))


class Linear:
    """Surrogate with ``F(x) = sum(w * x)`` per output frame."""

    def __init__(self, w):
        self.w = w

    def forward(self, xs, train=False):
        self.n = xs.shape[0]
        return np.einsum("bft,ft->b", xs, self.w)[:, None]

    def backward(self, dy, input_grad=True):
        return dy[:, 0, None, None] * self.w[None]


class TestSaliency:
    def test_zero_head_gives_zero_map(self, spec):
        m = CrnnModel(seed=1)
        m.head.params["weight"][:] = 0.0
        assert not np.any(saliency(m, spec).values)

    def test_matches_finite_difference(self, model, spec):
        rng = np.random.default_rng(3)
        x = spec.copy()
        j = 4
        grad = saliency(model, x, j).values
        cells = rng.choice(x.size, 20, replace=False)
        # sign-free comparison since saliency is a magnitude
        num = numeric_grad(lambda: model_output(model, x, j), x, idx=cells)
        assert rel_error(grad.reshape(-1)[cells], np.abs(num)) < 1e-4

    def test_causal_side_is_zero(self, model, spec):
        for j in (0, 3, 8):
            m = saliency(model, spec, j).values
            _, hi = receptive_window(j)
            assert not np.any(m[:, hi:])
            assert np.any(m[:, hi - 1])

    def test_first_frame_fully_local(self, model, spec):
        m = saliency(model, spec, 0).values
        assert not np.any(m[:, 103:])

    def test_deterministic(self, model, spec):
        np.testing.assert_array_equal(saliency(model, spec).values, saliency(model, spec).values)

    @pytest.mark.parametrize("frame", [-1, 10, 2.5, "last"])
    def test_invalid_frame(self, model, spec, frame):
        with pytest.raises(ArgumentError):
            saliency(model, spec, frame)


class TestIntegratedGradients:
    def test_baseline_equals_input(self, model, spec):
        assert not np.any(integrated_gradients(model, spec, baseline=spec, steps=4).values)

    def test_completeness(self, model, spec):
        ig = integrated_gradients(model, spec, steps=200)
        assert completeness_error(model, spec, ig) <= 0.01

    def test_linear_surrogate_exact(self, rng):
        w = rng.standard_normal((21, 30))
        x, b = rng.standard_normal((21, 30)), rng.standard_normal((21, 30))
        ig = integrated_gradients(Linear(w), x, baseline=b, steps=1)
        np.testing.assert_array_equal(ig.values, (x - b) * w)

    def test_shape_mismatch(self, model, spec):
        with pytest.raises(ArgumentError):
            integrated_gradients(model, spec, baseline=np.zeros((21, 5)))
        with pytest.raises(ArgumentError):
            integrated_gradients(model, spec, steps=0)


class TestFrequencyAverage:
    def test_constant(self):
        np.testing.assert_allclose(frequency_average(AttributionMap(np.full((21, 9), 0.3))), np.full(9, 0.3), rtol=1e-15)

    def test_length(self, rng):
        assert frequency_average(AttributionMap(rng.standard_normal((21, 77)))).size == 77

    def test_normalized_scale_invariant(self, rng):
        v = rng.standard_normal((21, 50))
        a = frequency_average(AttributionMap(v), normalize=True)
        b = frequency_average(AttributionMap(42.0 * v), normalize=True)
        np.testing.assert_allclose(a, b, rtol=1e-12)
        assert np.max(np.abs(a)) == pytest.approx(1.0)


def test_map_must_be_finite():
    with pytest.raises(ArgumentError):
        AttributionMap(np.array([[np.inf]]))
