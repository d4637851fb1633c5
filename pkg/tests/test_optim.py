"""Adam: update math against a 64-bit reference, groups, clipping, convergence."""

import numpy as np
import pytest

from xferlearn.optim import Adam
from xferlearn.tensor import Tensor, backward, use_float64


def reference_adam(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook update sequence in float64."""
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return theta


class TestStep:
    def test_first_step_magnitude(self):
        # with a constant gradient the bias-corrected first step is ~lr
        with use_float64():
            p = Tensor(np.array([5.0]), requires_grad=True)
            p.grad = np.array([2.0])
            Adam([p], lr=1e-3).step()
        delta = 5.0 - p.data[0]
        assert abs(delta - 1e-3) <= 1e-8

    def test_matches_float64_reference_over_many_steps(self):
        rng = np.random.default_rng(0)
        theta0 = rng.normal(0, 1, (4, 3))
        grads = [rng.normal(0, 1, (4, 3)) for _ in range(50)]
        with use_float64():
            p = Tensor(theta0.copy(), requires_grad=True)
            opt = Adam([p], lr=1e-3)
            for g in grads:
                p.grad = g.copy()
                opt.step()
            got = p.data.copy()
        np.testing.assert_allclose(got, reference_adam(theta0, grads), atol=1e-10)

    def test_none_grad_is_noop(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = None
        opt = Adam([p])
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_zero_grads_clears_all(self):
        p = Tensor(np.ones(3), requires_grad=True)
        q = Tensor(np.ones(2), requires_grad=True)
        p.grad = np.ones(3)
        q.grad = np.ones(2)
        Adam([p, q]).zero_grads()
        assert (p.grad == 0).all() and (q.grad == 0).all()

    def test_shape_mismatch_rejected(self):
        p = Tensor(np.ones(3), requires_grad=True)
        p.grad = np.ones(4)
        with pytest.raises(ValueError, match="shape"):
            Adam([p]).step()


class TestClipping:
    def test_large_gradient_is_rescaled(self):
        with use_float64():
            a = Tensor(np.array([0.0]), requires_grad=True)
            b = Tensor(np.array([0.0]), requires_grad=True)
            a.grad = np.array([100.0])
            b.grad = np.array([1.0])
            Adam([a], lr=1e-3, clip=1.0).step()
            Adam([b], lr=1e-3, clip=1.0).step()
        # after clipping both gradients have norm 1, so steps are identical
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_small_gradient_unaffected_by_clip(self):
        with use_float64():
            a = Tensor(np.array([0.0]), requires_grad=True)
            b = Tensor(np.array([0.0]), requires_grad=True)
            a.grad = np.array([0.5])
            b.grad = np.array([0.5])
            Adam([a], lr=1e-3, clip=10.0).step()
            Adam([b], lr=1e-3).step()
        np.testing.assert_allclose(a.data, b.data, atol=1e-15)


class TestGroups:
    def test_independent_groups_do_not_interact(self):
        with use_float64():
            enc = Tensor(np.array([1.0]), requires_grad=True)
            disc = Tensor(np.array([1.0]), requires_grad=True)
            opt_e = Adam([enc], lr=1e-3)
            opt_d = Adam([disc], lr=1e-2)
            enc.grad = np.array([1.0])
            opt_e.step()
        assert disc.data[0] == 1.0
        assert enc.data[0] != 1.0
        assert opt_d.step_count == 0


class TestConvergence:
    def test_convex_quadratic_loss_drops_100x(self):
        with use_float64():
            target = np.array([3.0, -1.0, 0.5, 2.0])
            p = Tensor(np.zeros(4), requires_grad=True)
            opt = Adam([p], lr=0.05)
            first = None
            for _ in range(500):
                p.zero_grad()
                diff = p - Tensor(target)
                loss = (diff * diff).sum()
                if first is None:
                    first = loss.item()
                backward(loss)
                opt.step()
            final = ((p.data - target) ** 2).sum()
        assert final <= first / 100.0
