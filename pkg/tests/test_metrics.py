"""Evaluation accuracy and multi-seed aggregation."""

import numpy as np
import pytest

from xferlearn.data import synth_digits
from xferlearn.layers import EmbeddingNetwork, synth_embedding_spec
from xferlearn.metrics import Aggregate, EvalResult, aggregate, evaluate


class TestAggregate:
    def test_frozen_two_seed_example(self):
        agg = aggregate([0.9, 0.94])
        assert abs(agg.mean - 0.92) <= 1e-12
        assert abs(agg.stderr - 0.02) <= 1e-12
        assert agg.n_seeds == 2

    def test_permutation_invariance(self):
        vals = [0.1, 0.5, 0.9, 0.3]
        a = aggregate(vals)
        b = aggregate(vals[::-1])
        assert a.mean == b.mean and abs(a.stderr - b.stderr) <= 1e-15

    def test_accepts_eval_results(self):
        results = [EvalResult(accuracy=0.8, n_examples=10),
                   EvalResult(accuracy=0.6, n_examples=10)]
        assert abs(aggregate(results).mean - 0.7) <= 1e-12

    def test_identical_values_zero_stderr(self):
        assert aggregate([0.5, 0.5, 0.5]).stderr == 0.0

    def test_single_value_rejected(self):
        with pytest.raises(ValueError):
            aggregate([0.9])


class TestEvaluate:
    def _net_and_data(self):
        data = synth_digits(n_per_class=8, classes=range(3), seed=0)
        net = EmbeddingNetwork(synth_embedding_spec(n_classes=3), seed=0)
        return net, data

    def test_accuracy_in_unit_interval_and_counts(self):
        net, data = self._net_and_data()
        res = evaluate(net, data)
        assert 0.0 <= res.accuracy <= 1.0
        assert res.n_examples == len(data)
        assert set(res.per_class) == {0, 1, 2}

    def test_batch_size_does_not_change_result(self):
        net, data = self._net_and_data()
        a = evaluate(net, data, batch_size=5)
        b = evaluate(net, data, batch_size=256)
        assert a.accuracy == b.accuracy

    def test_restores_training_mode(self):
        net, data = self._net_and_data()
        net.train()
        evaluate(net, data)
        assert net.training
        net.eval()
        evaluate(net, data)
        assert not net.training

    def test_per_class_weighted_mean_equals_accuracy(self):
        net, data = self._net_and_data()
        res = evaluate(net, data)
        counts = {c: int((data.labels == c).sum()) for c in res.per_class}
        weighted = sum(res.per_class[c] * counts[c] for c in counts) / len(data)
        assert abs(weighted - res.accuracy) <= 1e-12
