"""Tape/Tensor contracts, loss values against hand-derived oracles."""

import math

import numpy as np
import pytest

import dememlab.autodiff as ad
import dememlab.models as md
from dememlab.errors import InputError, NumericError, UsageError

from conftest import finite_difference, model_gradient, model_loss_fn


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_give_log_k(self):
        losses = ad.softmax_cross_entropy(np.array([[0.0, 0.0]]), np.array([0]))
        assert losses.data[0] == pytest.approx(math.log(2.0), abs=1e-12)

    def test_saturated_correct_class(self):
        losses = ad.softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
        assert losses.data[0] < 1e-12

    def test_hand_evaluated_two_class(self):
        # -log softmax([1, 0])[0] = log(1 + e^-1)
        losses = ad.softmax_cross_entropy(np.array([[1.0, 0.0]]), np.array([0]))
        assert losses.data[0] == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-12)
        assert losses.data[0] == pytest.approx(0.313262, abs=1e-6)

    def test_rows_sum_to_one_and_losses_nonnegative(self, rng):
        logits = rng.normal(0, 3, size=(50, 5))
        assert np.allclose(ad.softmax(logits).sum(axis=1), 1.0, atol=1e-12)
        losses = ad.softmax_cross_entropy(logits, rng.integers(0, 5, size=50))
        assert np.all(losses.data >= 0)

    def test_extreme_logits_stay_finite(self, rng):
        logits = rng.uniform(-1e4, 1e4, size=(20, 4))
        losses = ad.softmax_cross_entropy(logits, rng.integers(0, 4, size=20))
        assert np.all(np.isfinite(losses.data))

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            ad.softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))

    def test_non_finite_logit(self):
        with pytest.raises(NumericError):
            ad.softmax_cross_entropy(np.array([[np.inf, 0.0]]), np.array([0]))

    def test_gradient_matches_finite_differences(self, rng):
        logits = rng.normal(size=(6, 4))
        y = rng.integers(0, 4, size=6)
        tape = ad.Tape()
        lt = ad.Tensor(logits, tape)
        tape.backward(ad.mean_all(ad.softmax_cross_entropy(lt, y)))

        def f(flat):
            t = ad.softmax_cross_entropy(flat.reshape(6, 4), y)
            return float(ad.mean_all(t).data)

        fd = finite_difference(f, logits.ravel().copy())
        np.testing.assert_allclose(lt.grad.ravel(), fd, rtol=1e-6, atol=1e-9)


def _dist_logits(*rows):
    return np.log(np.array(rows))


class TestKlDivergence:
    def test_identical_inputs_give_zero(self, rng):
        logits = rng.normal(0, 2, size=(10, 3))
        kl = ad.kl_divergence(logits, logits.copy())
        assert np.allclose(kl.data, 0.0, atol=1e-12)

    def test_hand_evaluated_pair(self):
        kl = ad.kl_divergence(_dist_logits([0.5, 0.5]), _dist_logits([0.25, 0.75]))
        expected = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
        assert kl.data[0] == pytest.approx(expected, abs=1e-12)
        assert kl.data[0] == pytest.approx(0.143841, abs=1e-6)

    def test_asymmetry_of_swapped_arguments(self):
        kl = ad.kl_divergence(_dist_logits([0.25, 0.75]), _dist_logits([0.5, 0.5]))
        expected = 0.25 * math.log(0.5) + 0.75 * math.log(1.5)
        assert kl.data[0] == pytest.approx(expected, abs=1e-12)
        assert kl.data[0] == pytest.approx(0.130812, abs=1e-6)

    def test_nonnegative_and_zero_iff_equal(self, rng):
        p = rng.normal(size=(40, 4))
        q = rng.normal(size=(40, 4))
        kl = ad.kl_divergence(p, q).data
        assert np.all(kl >= 0)
        assert np.all(kl > 1e-6)  # random distinct logits
        same = ad.kl_divergence(p, p + 1.7).data  # shared shift: same distribution
        assert np.allclose(same, 0.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            ad.kl_divergence(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_gradient_both_arguments(self, rng):
        p = rng.normal(size=(4, 3))
        q = rng.normal(size=(4, 3))
        tape = ad.Tape()
        pt, qt = ad.Tensor(p, tape), ad.Tensor(q, tape)
        tape.backward(ad.mean_all(ad.kl_divergence(pt, qt)))

        fd_p = finite_difference(
            lambda flat: float(ad.mean_all(ad.kl_divergence(flat.reshape(4, 3), q)).data),
            p.ravel().copy())
        fd_q = finite_difference(
            lambda flat: float(ad.mean_all(ad.kl_divergence(p, flat.reshape(4, 3))).data),
            q.ravel().copy())
        np.testing.assert_allclose(pt.grad.ravel(), fd_p, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(qt.grad.ravel(), fd_q, rtol=1e-6, atol=1e-9)


class TestBatchVariance:
    def test_constant_vector_is_exactly_zero(self):
        # length 3 would leave ~1e-32 residue without the constant fast path
        for n in (1, 3, 4, 7):
            assert float(ad.batch_variance(np.array([0.7] * n)).data) == 0.0

    def test_hand_evaluated(self):
        assert float(ad.batch_variance(np.array([1.0, 2.0, 3.0, 4.0])).data) == 1.25

    def test_gradient_matches_hand_derivation(self):
        tape = ad.Tape()
        v = ad.Tensor(np.array([1.0, 2.0, 3.0, 4.0]), tape)
        tape.backward(ad.batch_variance(v))
        np.testing.assert_allclose(v.grad, [-0.75, -0.25, 0.25, 0.75], atol=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        x = rng.normal(size=12)
        tape = ad.Tape()
        v = ad.Tensor(x, tape)
        tape.backward(ad.batch_variance(v))
        fd = finite_difference(lambda w: float(ad.batch_variance(w).data), x.copy())
        np.testing.assert_allclose(v.grad, fd, rtol=1e-6, atol=1e-9)

    def test_permutation_and_shift_invariance(self, rng):
        v = rng.normal(size=31)
        base = float(ad.batch_variance(v).data)
        assert float(ad.batch_variance(rng.permutation(v)).data) == pytest.approx(base, abs=1e-12)
        for c in (-3.0, 0.25, 1e3):
            shifted = float(ad.batch_variance(v + c).data)
            assert shifted == pytest.approx(base, abs=1e-9 * max(1.0, abs(c)))

    def test_empty_vector(self):
        with pytest.raises(InputError):
            ad.batch_variance(np.array([]))

    def test_single_value_is_zero(self):
        assert float(ad.batch_variance(np.array([3.0])).data) == 0.0


class TestBackward:
    def test_constant_loss_gives_exact_zero_gradients(self):
        tape = ad.Tape()
        w = ad.Tensor(np.ones((3, 2)), tape)
        loss = ad.mean_all(ad.Tensor(np.array([5.0]), tape))
        tape.backward(loss)
        assert np.all(w.grad == 0.0)

    def test_linear_layer_squared_error_closed_form(self):
        # One point, one output: loss = (w.x - y)^2, d/dw = 2(w.x - y) x
        x = np.array([[0.3, -1.2]])
        w0 = np.array([[0.7], [0.4]])
        y = 1.5
        tape = ad.Tape()
        w = ad.Tensor(w0, tape)
        diff = ad.add(ad.matmul(ad.Tensor(x), w), -y)
        tape.backward(ad.mean_all(ad.mul(diff, diff)))
        residual = float((x @ w0)[0, 0]) - y
        np.testing.assert_allclose(w.grad, 2.0 * residual * x.T, rtol=1e-12)

    def test_two_layer_relu_matches_finite_differences(self, rng):
        model = md.init_model(md.ModelConfig((3, 8, 2)), 7)
        x = rng.random((5, 3))
        y = rng.integers(0, 2, size=5)
        grad = model_gradient(model, x, y)
        fd = finite_difference(model_loss_fn(model, x, y), model.flatten(), h=1e-5)
        scale = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(grad - fd) / scale) <= 1e-6

    def test_gradients_accumulate_across_reuse(self):
        # f(a) = mean(a*a) + mean(a): grad = 2a/n + 1/n
        a0 = np.array([1.0, -2.0, 3.0])
        tape = ad.Tape()
        a = ad.Tensor(a0, tape)
        loss = ad.add(ad.mean_all(ad.mul(a, a)), ad.mean_all(a))
        tape.backward(loss)
        np.testing.assert_allclose(a.grad, 2.0 * a0 / 3.0 + 1.0 / 3.0, rtol=1e-12)

    def test_loss_not_on_tape_is_usage_error(self):
        tape = ad.Tape()
        ad.Tensor(np.ones(3), tape)
        stray = ad.mean_all(ad.Tensor(np.ones(2)))
        with pytest.raises(UsageError):
            tape.backward(stray)

    def test_non_scalar_loss_rejected(self):
        tape = ad.Tape()
        v = ad.Tensor(np.ones(3), tape)
        with pytest.raises(InputError):
            tape.backward(v)

    def test_mixed_tapes_rejected(self):
        a = ad.Tensor(np.ones(2), ad.Tape())
        b = ad.Tensor(np.ones(2), ad.Tape())
        with pytest.raises(UsageError):
            ad.add(a, b)


class TestRandomNetworkGradients:
    """Seeded property check; the acceptance suite runs the full 100 trials."""

    @pytest.mark.parametrize("trial", range(10))
    def test_small_net_gradient_matches_finite_differences(self, trial):
        rng = np.random.default_rng(1000 + trial)
        depth = rng.integers(1, 4)
        widths = [int(rng.integers(2, 8))] + \
                 [int(rng.integers(2, 33)) for _ in range(depth - 1)] + \
                 [int(rng.integers(2, 5))]
        model = md.init_model(md.ModelConfig(tuple(widths)), int(rng.integers(1 << 31)))
        n = int(rng.integers(1, 7))
        x = rng.random((n, widths[0]))
        y = rng.integers(0, widths[-1], size=n)
        grad = model_gradient(model, x, y)
        fd = finite_difference(model_loss_fn(model, x, y), model.flatten(), h=1e-5)
        denom = max(np.abs(fd).max(), 1e-8)
        assert np.abs(grad - fd).max() / denom <= 1e-4
