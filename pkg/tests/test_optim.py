import math

import numpy as np
import pytest

from debiasrec.core import NumericalError
from debiasrec.optim import AdamHyper, GradCheckReport, ParamStore, adam_step, grad_check


def make_store(**arrays):
    store = ParamStore()
    for name, arr in arrays.items():
        store.add(name, arr)
    return store


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = make_store(a=np.zeros(2))
        with pytest.raises(ValueError):
            store.add("a", np.zeros(2))

    def test_grad_and_moments_match_shape(self):
        store = make_store(a=np.zeros((2, 3)))
        assert store.grad("a").shape == (2, 3)
        m, v = store.moments("a")
        assert m.shape == v.shape == (2, 3)

    def test_snapshot_restore_roundtrip(self):
        store = make_store(a=np.arange(4.0))
        snap = store.snapshot()
        store.value("a")[...] = -1.0
        store.restore(snap)
        np.testing.assert_array_equal(store.value("a"), np.arange(4.0))


class TestAdamStep:
    def test_zero_gradient_keeps_parameters(self):
        store = make_store(a=np.array([1.0, 2.0]))
        adam_step(store, 1, AdamHyper())
        np.testing.assert_array_equal(store.value("a"), [1.0, 2.0])

    def test_first_step_moves_by_learning_rate(self):
        store = make_store(a=np.array([0.0]))
        store.grad("a")[...] = 1.0
        adam_step(store, 1, AdamHyper(lr=0.001))
        # bias-corrected first step is -lr * g / (|g| + eps)
        np.testing.assert_allclose(store.value("a"), [-0.001], rtol=1e-6)

    def test_two_steps_match_scalar_reference(self):
        store = make_store(a=np.array([0.5]))
        hyper = AdamHyper(lr=0.01)
        theta, m, v = 0.5, 0.0, 0.0
        for t in (1, 2):
            store.grad("a")[...] = 2.0
            adam_step(store, t, hyper)
            m = 0.9 * m + 0.1 * 2.0
            v = 0.999 * v + 0.001 * 4.0
            theta -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            np.testing.assert_allclose(store.value("a"), [theta], rtol=1e-12)

    def test_gradients_zeroed_after_step(self):
        store = make_store(a=np.array([1.0]))
        store.grad("a")[...] = 3.0
        adam_step(store, 1, AdamHyper())
        np.testing.assert_array_equal(store.grad("a"), [0.0])

    def test_bad_hyperparameters_rejected(self):
        with pytest.raises(ValueError):
            AdamHyper(beta1=1.0)
        with pytest.raises(ValueError):
            AdamHyper(eps=0.0)


class TestGradCheck:
    def quadratic_loss(self, store):
        theta = store.value("theta")
        store.zero_grads()
        store.grad("theta")[...] = theta
        return float(0.5 * (theta ** 2).sum())

    def test_quadratic_passes_to_machine_precision(self):
        store = make_store(theta=np.array([0.7, -1.2, 3.0]))
        report = grad_check(self.quadratic_loss, store, eps=1e-5, sample=3)
        assert report.max_rel_error < 1e-9

    def test_corrupted_gradient_fails(self):
        def bad_loss(store):
            theta = store.value("theta")
            store.zero_grads()
            store.grad("theta")[...] = 2.0 * theta  # deliberately doubled
            return float(0.5 * (theta ** 2).sum())

        store = make_store(theta=np.array([0.7, -1.2]))
        report = grad_check(bad_loss, store, eps=1e-5, sample=2)
        assert report.max_rel_error > 1e-2
        assert report.failures(1e-4)

    def test_params_unchanged_by_check(self):
        store = make_store(theta=np.array([0.7, -1.2, 3.0]))
        before = store.value("theta").copy()
        grad_check(self.quadratic_loss, store, eps=1e-5, sample=3)
        np.testing.assert_array_equal(store.value("theta"), before)

    def test_nonfinite_loss_errors(self):
        def inf_loss(store):
            return float("inf")

        store = make_store(theta=np.array([1.0]))
        with pytest.raises(NumericalError):
            grad_check(inf_loss, store, eps=1e-5, sample=1)

    def test_report_formatting(self):
        store = make_store(theta=np.array([0.7]))
        report = grad_check(self.quadratic_loss, store, eps=1e-5, sample=1)
        text = report.format(1e-4)
        assert "theta" in text and "overall max relative error" in text
