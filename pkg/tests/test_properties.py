"""Property-based invariants over the numeric core."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xferlearn import tensor as T
from xferlearn.losses import (domain_loss_D, domain_loss_E, entropy_transfer,
                              normalize_rows, similarity, supervised_ce)
from xferlearn.metrics import aggregate
from xferlearn.tensor import Tensor, backward, use_float64

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=32)


def matrices(rows=(1, 6), cols=(2, 6)):
    return st.integers(*rows).flatmap(
        lambda r: st.integers(*cols).flatmap(
            lambda c: arrays(np.float64, (r, c), elements=finite)))


class TestSoftmax:
    @given(matrices())
    @settings(max_examples=50, deadline=None)
    def test_rows_sum_to_one(self, x):
        with use_float64():
            p = T.softmax(Tensor(x)).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)
        assert (p >= 0).all()

    @given(matrices(), st.floats(-50, 50, allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_shift_invariance(self, x, shift):
        with use_float64():
            a = T.softmax(Tensor(x)).data
            b = T.softmax(Tensor(x + shift)).data
        np.testing.assert_allclose(a, b, atol=1e-9)

    @given(matrices())
    @settings(max_examples=30, deadline=None)
    def test_log_softmax_consistent(self, x):
        with use_float64():
            a = T.log_softmax(Tensor(x)).data
            b = np.log(T.softmax(Tensor(x)).data)
        np.testing.assert_allclose(a, b, atol=1e-9)


class TestEntropyTemperature:
    @given(matrices(rows=(2, 5), cols=(3, 6)), matrices(rows=(2, 4), cols=(3, 6)))
    @settings(max_examples=30, deadline=None)
    def test_monotone_in_temperature(self, q, s):
        if q.shape[1] != s.shape[1]:
            s = np.resize(s, (s.shape[0], q.shape[1]))
        norms = np.sqrt((s**2).sum(axis=-1))
        s = s[norms > 1e-3]
        if len(s) < 2:
            return
        with use_float64():
            lo = entropy_transfer(Tensor(q), Tensor(s), 0.5).item()
            hi = entropy_transfer(Tensor(q), Tensor(s), 4.0).item()
        assert lo <= hi + 1e-9
        assert 0.0 <= lo and hi <= np.log(len(s)) + 1e-9


class TestLossBounds:
    @given(matrices(rows=(1, 6), cols=(2, 6)), st.randoms(use_true_random=False))
    @settings(max_examples=50, deadline=None)
    def test_cross_entropy_nonnegative(self, logits, rnd):
        labels = [rnd.randrange(logits.shape[1]) for _ in range(logits.shape[0])]
        with use_float64():
            loss = supervised_ce(Tensor(logits), labels).item()
        assert loss >= -1e-12

    @given(arrays(np.float64, (4, 1), elements=finite),
           arrays(np.float64, (4, 1), elements=finite))
    @settings(max_examples=50, deadline=None)
    def test_domain_losses_positive_and_swap_symmetric(self, a, b):
        with use_float64():
            d = domain_loss_D(Tensor(a), Tensor(b)).item()
            e = domain_loss_E(Tensor(b), Tensor(a)).item()
        assert d >= 0 and e >= 0
        assert abs(d - e) <= 1e-9


class TestNormalize:
    @given(matrices(rows=(1, 5), cols=(2, 5)))
    @settings(max_examples=50, deadline=None)
    def test_unit_norm_and_idempotent(self, x):
        norms = np.sqrt((x**2).sum(axis=-1))
        x = x[norms > 1e-3]
        if len(x) == 0:
            return
        with use_float64():
            once = normalize_rows(Tensor(x)).data
            twice = normalize_rows(Tensor(once)).data
        np.testing.assert_allclose((once**2).sum(axis=-1), 1.0, atol=1e-9)
        np.testing.assert_allclose(once, twice, atol=1e-9)

    @given(matrices(rows=(2, 4), cols=(2, 5)), st.floats(0.1, 100))
    @settings(max_examples=50, deadline=None)
    def test_similarity_support_scale_free(self, s, scale):
        norms = np.sqrt((s**2).sum(axis=-1))
        s = s[norms > 1e-2]
        if len(s) == 0:
            return
        q = np.ones((2, s.shape[1]))
        with use_float64():
            a = similarity(Tensor(q), Tensor(s)).data
            b = similarity(Tensor(q), Tensor(scale * s)).data
        np.testing.assert_allclose(a, b, atol=1e-8)


class TestAutodiff:
    @given(arrays(np.float64, (3, 4), elements=finite))
    @settings(max_examples=50, deadline=None)
    def test_gradient_scales_linearly(self, x):
        with use_float64():
            a = Tensor(x, requires_grad=True)
            a.zero_grad()
            backward((a * a).sum())
            g1 = a.grad.copy()
            a.zero_grad()
            backward((2.0 * (a * a)).sum())
            g2 = a.grad.copy()
        np.testing.assert_allclose(g2, 2.0 * g1, atol=1e-9)

    @given(arrays(np.float64, (2, 3), elements=finite))
    @settings(max_examples=50, deadline=None)
    def test_sum_gradient_is_ones(self, x):
        with use_float64():
            a = Tensor(x, requires_grad=True)
            a.zero_grad()
            backward(a.sum())
        np.testing.assert_array_equal(a.grad, np.ones_like(x))


class TestAggregate:
    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=10),
           st.randoms(use_true_random=False))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant(self, vals, rnd):
        shuffled = list(vals)
        rnd.shuffle(shuffled)
        a = aggregate(vals)
        b = aggregate(shuffled)
        assert abs(a.mean - b.mean) <= 1e-12
        assert abs(a.stderr - b.stderr) <= 1e-12

    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=10))
    @settings(max_examples=50, deadline=None)
    def test_mean_within_range_and_stderr_nonnegative(self, vals):
        agg = aggregate(vals)
        assert min(vals) - 1e-12 <= agg.mean <= max(vals) + 1e-12
        assert agg.stderr >= 0
