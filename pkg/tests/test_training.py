import math

import numpy as np
import pytest

from ovclass import autodiff as ad
from ovclass.aggregator import AggregatorConfig, init_model
from ovclass.bank import EmbeddingBank
from ovclass.errors import ConfigError, ValidationError
from ovclass.synthetic import ClusterSpec, gen_cluster_bank
from ovclass.training import (NegativeQueue, TrainConfig, batch_contrastive_loss,
                              info_nce_loss, queue_push, sample_training_pair,
                              train)


def _bank(classes=6, per_class=12, dim=8, seed=0):
    return gen_cluster_bank(ClusterSpec(n_classes=classes, dimension=dim,
                                        per_class=per_class, noise=0.1, seed=seed))


class TestSampleTrainingPair:
    def test_exactly_2k_records_cover_all_disjointly(self, rng):
        bank = _bank(classes=1, per_class=10)
        cid = bank.classes()[0]
        pair = sample_training_pair(bank, cid, 5, rng)
        assert pair.disjoint
        stacked = np.vstack([pair.set_a, pair.set_b])
        full = bank.embeddings(cid)
        # every record appears exactly once across A and B
        used = {tuple(row) for row in stacked}
        assert used == {tuple(row) for row in full}

    def test_too_few_records_falls_back_to_replacement(self, rng):
        bank = EmbeddingBank(dimension=4)
        for i in range(3):
            bank.add("c", np.eye(4, dtype=np.float32)[i % 4])
        pair = sample_training_pair(bank, "c", 5, rng)
        assert not pair.disjoint
        assert pair.set_a.shape == (5, 4)

    def test_fixed_seed_reproducible(self):
        bank = _bank()
        cid = bank.classes()[0]
        r1 = np.random.Generator(np.random.PCG64(9))
        r2 = np.random.Generator(np.random.PCG64(9))
        p1 = sample_training_pair(bank, cid, 3, r1)
        p2 = sample_training_pair(bank, cid, 3, r2)
        np.testing.assert_array_equal(p1.set_a, p2.set_a)
        np.testing.assert_array_equal(p1.set_b, p2.set_b)

    def test_unknown_class_raises(self, rng):
        with pytest.raises(KeyError):
            sample_training_pair(_bank(), "ghost", 2, rng)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestInfoNce:
    def test_anchor_equals_positive_one_orthogonal_negative(self):
        a = _unit([1.0, 0.0])
        loss = info_nce_loss(a, a.copy(), [_unit([0.0, 1.0])], temperature=1.0)
        assert loss == pytest.approx(math.log(1 + math.exp(-1.0)), abs=1e-9)

    def test_equal_logits_give_log_two(self):
        a = _unit([1.0, 0.0, 0.0])
        p = _unit([0.0, 1.0, 0.0])   # a.p = 0
        n = _unit([0.0, 0.0, 1.0])   # a.n = 0
        for tau in (0.02, 0.1, 1.0):
            assert info_nce_loss(a, p, [n], tau) == pytest.approx(math.log(2.0), abs=1e-9)

    def test_uniform_logits_give_log_n_plus_one(self):
        dim = 12
        a = _unit(np.eye(dim)[0])
        p = _unit(np.eye(dim)[1])
        negatives = [_unit(np.eye(dim)[i]) for i in range(2, 10)]
        loss = info_nce_loss(a, p, negatives, temperature=1.0)
        assert loss == pytest.approx(math.log(len(negatives) + 1), abs=1e-9)

    def test_empty_negatives_rejected(self):
        a = _unit([1.0, 0.0])
        with pytest.raises(ConfigError):
            info_nce_loss(a, a.copy(), [], temperature=1.0)

    def test_non_unit_inputs_rejected(self):
        a = np.array([2.0, 0.0])
        with pytest.raises(ValidationError):
            info_nce_loss(a, _unit([1, 0]), [_unit([0, 1])], temperature=1.0)

    def test_non_positive_temperature_rejected(self):
        a = _unit([1.0, 0.0])
        with pytest.raises(ConfigError):
            info_nce_loss(a, a.copy(), [a.copy()], temperature=0.0)


class TestNegativeQueue:
    def test_ring_replacement_keeps_newest(self):
        q = NegativeQueue(capacity=3, dim=2)
        e = lambda: np.array([1.0, 0.0], dtype=np.float32)
        queue_push(q, [("A", e()), ("B", e()), ("C", e())])
        queue_push(q, [("D", e())])
        _, ids = q.snapshot()
        assert set(ids) == {"B", "C", "D"}

    def test_push_to_empty_sets_fill(self):
        q = NegativeQueue(capacity=8, dim=2)
        queue_push(q, [("A", np.array([0.0, 1.0], dtype=np.float32))])
        assert q.fill == 1

    def test_full_cycle_returns_cursor_to_zero(self):
        q = NegativeQueue(capacity=4096, dim=2, max_push=512)
        batch = [(f"c{i}", np.array([1.0, 0.0], dtype=np.float32)) for i in range(512)]
        for _ in range(8):
            queue_push(q, batch)
        assert q.fill == 4096
        assert q.cursor == 0

    def test_oversize_push_rejected(self):
        q = NegativeQueue(capacity=8, dim=2, max_push=2)
        e = np.array([1.0, 0.0], dtype=np.float32)
        with pytest.raises(ValidationError):
            queue_push(q, [("a", e), ("b", e), ("c", e)])

    def test_non_unit_entry_rejected(self):
        q = NegativeQueue(capacity=4, dim=2)
        with pytest.raises(ValidationError):
            queue_push(q, [("a", np.array([2.0, 0.0], dtype=np.float32))])

    def test_entries_stay_unit_norm(self, rng):
        q = NegativeQueue(capacity=16, dim=8)
        for _ in range(5):
            entries = []
            for i in range(4):
                v = rng.normal(size=8)
                entries.append((f"c{i}", (v / np.linalg.norm(v)).astype(np.float32)))
            queue_push(q, entries)
        vectors, _ = q.snapshot()
        np.testing.assert_allclose(np.linalg.norm(vectors, axis=1), 1.0, atol=1e-5)

    def test_same_class_entries_masked_out_of_loss(self, rng):
        """The batch loss must equal a direct computation that excludes
        queue entries sharing the anchor's class."""
        dim = 6
        anchors = rng.normal(size=(2, dim))
        anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
        positives = rng.normal(size=(2, dim))
        positives /= np.linalg.norm(positives, axis=1, keepdims=True)
        queue = NegativeQueue(capacity=4, dim=dim)
        qvecs = rng.normal(size=(3, dim))
        qvecs /= np.linalg.norm(qvecs, axis=1, keepdims=True)
        queue_push(queue, [("c0", qvecs[0].astype(np.float32)),
                           ("other", qvecs[1].astype(np.float32)),
                           ("c1", qvecs[2].astype(np.float32))])
        tau = 0.5
        loss = batch_contrastive_loss(ad.constant(anchors), ad.constant(positives),
                                      ["c0", "c1"], queue, tau).item()
        stored = queue.snapshot()[0].astype(np.float64)
        expected = 0.0
        for i, cid in enumerate(["c0", "c1"]):
            negs = [positives[j] for j in range(2) if j != i]
            negs += [stored[j] for j, qid in enumerate(["c0", "other", "c1"]) if qid != cid]
            expected += info_nce_loss(anchors[i], positives[i], negs, tau)
        expected /= 2
        assert loss == pytest.approx(expected, rel=1e-6)


class TestTrainLoop:
    _tc = dict(k_max=3, temperature=0.1, queue_capacity=12,
               queue_slots_per_iteration=3, batch_size=3, learning_rate=1e-3, seed=5)
    _ac = AggregatorConfig(blocks=1, dim=8, mlp_dim=16, heads=2, seed=5)

    def test_zero_epochs_returns_initial_model_bit_exact(self):
        bank = _bank()
        model, report = train(TrainConfig(epochs=0, **self._tc), bank,
                              aggregator_config=self._ac)
        reference = init_model(self._ac)
        for name, t in reference.params.items():
            np.testing.assert_array_equal(t.data, model.params[name].data)
        assert report.steps == 0

    def test_same_seed_identical_reports(self):
        bank = _bank()
        _, r1 = train(TrainConfig(epochs=2, **self._tc), bank, aggregator_config=self._ac)
        _, r2 = train(TrainConfig(epochs=2, **self._tc), bank, aggregator_config=self._ac)
        assert r1.epoch_losses == r2.epoch_losses

    def test_losses_non_negative_and_finite(self):
        bank = _bank()
        _, report = train(TrainConfig(epochs=3, **self._tc), bank,
                          aggregator_config=self._ac)
        assert all(np.isfinite(l) and l >= 0.0 for l in report.epoch_losses)

    def test_batch_larger_than_class_count_rejected(self):
        bank = _bank(classes=2)
        with pytest.raises(ConfigError):
            train(TrainConfig(epochs=1, k_max=2, temperature=0.1, queue_capacity=8,
                              queue_slots_per_iteration=4, batch_size=4,
                              learning_rate=1e-3, seed=1), bank)

    def test_dimension_mismatch_rejected(self):
        bank = _bank(dim=8)
        bad = AggregatorConfig(blocks=1, dim=16, mlp_dim=16, heads=2, seed=5)
        with pytest.raises(ConfigError):
            train(TrainConfig(epochs=1, **self._tc), bank, aggregator_config=bad)

    def test_training_reduces_loss(self):
        bank = _bank(classes=8, per_class=16)
        tc = dict(self._tc)
        tc["batch_size"] = 4
        tc["queue_slots_per_iteration"] = 4
        _, report = train(TrainConfig(epochs=10, **tc), bank, aggregator_config=self._ac)
        assert report.epoch_losses[-1] < report.epoch_losses[0]

    def test_logit_bound_with_default_temperature(self, rng):
        # unit cosines in [-1, 1] over tau=0.02 keep per-term logits in [-50, 50]
        a = rng.normal(size=8)
        a /= np.linalg.norm(a)
        p = rng.normal(size=8)
        p /= np.linalg.norm(p)
        logits = np.array([a @ p]) / 0.02
        assert np.all(np.abs(logits) <= 50.0 + 1e-9)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(temperature=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=1)
        with pytest.raises(ConfigError):
            TrainConfig(queue_capacity=4, queue_slots_per_iteration=8)

    def test_json_round_trip(self):
        cfg = TrainConfig(k_max=4, batch_size=16, seed=11)
        clone = TrainConfig.from_json(__import__("json").dumps(cfg.to_dict()))
        assert clone == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_json('{"momentum": 0.9}')
