import math

import numpy as np
import pytest

from conftest import random_model
from mrfgnn.autodiff import Tape
from mrfgnn.gnn import MSG, NODE, GNNArchitecture, build_gnn_graph, init_weights, zero_weights
from mrfgnn.model import DatasetSpec, generate_dataset, label
from mrfgnn.training import (MAP, MARGINALS, EarlyStopping, TrainConfig, TrainingError,
                             batch_loss, bce, cross_entropy_loss, evaluate_loss, load_checkpoint,
                             save_checkpoint, targets_for, train)

SMALL = GNNArchitecture(NODE, T=3, mlp_widths=(16, 16))


@pytest.fixture(scope="module")
def tiny_dataset():
    return generate_dataset(DatasetSpec(kinds=("chain", "cycle", "grid"), models_per_structure=10), 5)


class TestLoss:
    def test_half_prediction_costs_log2(self):
        t = Tape()
        z = t.constant(np.zeros((4, 1)))
        loss = cross_entropy_loss(t, z, np.array([0.1, 0.5, 0.9, 1.0]))
        assert float(loss.value) == pytest.approx(4 * math.log(2), abs=1e-14)

    def test_matches_probability_form(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=7)
        q = rng.uniform(size=7)
        t = Tape()
        loss = cross_entropy_loss(t, t.constant(z[:, None]), q)
        assert float(loss.value) == pytest.approx(bce(q, 1 / (1 + np.exp(-z))), rel=1e-12)

    def test_logit_gradient(self):
        from mrfgnn.autodiff import ParamStore
        s = ParamStore()
        s.add("z", np.array([[0.3], [-1.2]]))
        t = Tape()
        q = np.array([0.2, 0.9])
        g = t.backward(cross_entropy_loss(t, t.param(s, "z"), q))["z"][:, 0]
        np.testing.assert_allclose(g, 1 / (1 + np.exp(-s["z"][:, 0])) - q, atol=1e-15)

    def test_saturated_logits_stay_finite(self):
        t = Tape()
        loss = cross_entropy_loss(t, t.constant(np.array([[800.0], [-800.0]])), np.array([0.0, 1.0]))
        assert float(loss.value) == pytest.approx(1600.0)

    def test_shape_check(self):
        t = Tape()
        with pytest.raises(ValueError):
            cross_entropy_loss(t, t.constant(np.zeros((3, 1))), np.zeros(4))

    def test_map_targets_are_hard(self):
        m = label(random_model("grid", 9, 0), "grid")
        q = targets_for(MAP, m)
        assert set(q.tolist()) <= {0.0, 1.0}
        assert np.array_equal(q == 1, m.map_state == 1)
        assert np.array_equal(targets_for(MARGINALS, m), m.marginals_p1)


class TestEarlyStopping:
    def test_stops_window_checks_after_best(self):
        s = EarlyStopping(20)
        values = [5.0, 4.0, 3.0] + [3.0 + 0.1 * k for k in range(30)]
        stops = [s.update(v) for v in values]
        assert stops.index(True) + 1 == 23

    def test_equal_loss_is_not_improvement(self):
        s = EarlyStopping(2)
        assert not s.update(1.0)
        assert not s.update(1.0)
        assert s.update(1.0)

    def test_improvement_resets(self):
        s = EarlyStopping(3)
        for v in (2.0, 2.5, 2.5, 1.0, 1.5, 1.5):
            assert not s.update(v)
        assert s.update(1.5)


class TestBatching:
    @pytest.mark.parametrize("kind", [NODE, MSG])
    def test_batch_gradient_is_mean_of_singles(self, kind):
        arch = GNNArchitecture(kind, T=3)
        w = init_weights(arch, 0)
        models = [label(random_model(s, 9, 1), s) for s in ("chain", "wheel", "complete", "grid")]
        graphs = [build_gnn_graph(m.mrf, kind) for m in models]
        targets = [m.marginals_p1 for m in models]
        t = Tape()
        loss, _ = batch_loss(w, graphs, targets, t)
        g_batch = t.backward(loss, w.store.copy())
        acc = {k: 0.0 for k in g_batch}
        vals = []
        for g, q in zip(graphs, targets):
            t = Tape()
            l1, _ = batch_loss(w, [g], [q], t)
            vals.append(float(l1.value))
            for k, v in t.backward(l1, w.store.copy()).items():
                acc[k] = acc[k] + v / len(graphs)
        assert float(loss.value) == pytest.approx(np.mean(vals), abs=1e-10)
        for k in g_batch:
            np.testing.assert_allclose(g_batch[k], acc[k], atol=1e-10, rtol=0)

    def test_evaluate_loss_chunk_invariant(self, tiny_dataset):
        w = init_weights(SMALL, 1)
        graphs = [build_gnn_graph(m.mrf, NODE) for m in tiny_dataset.train]
        q = [m.marginals_p1 for m in tiny_dataset.train]
        assert evaluate_loss(w, graphs, q, chunk=7) == pytest.approx(
            evaluate_loss(w, graphs, q, chunk=64), abs=1e-10)

    def test_zero_weights_loss(self, tiny_dataset):
        graphs = [build_gnn_graph(m.mrf, NODE) for m in tiny_dataset.train]
        q = [m.marginals_p1 for m in tiny_dataset.train]
        assert evaluate_loss(zero_weights(SMALL), graphs, q) == pytest.approx(9 * math.log(2))


class TestTrain:
    def test_deterministic(self, tiny_dataset):
        cfg = TrainConfig(max_epochs=3, seed=4)
        a, ha = train(tiny_dataset, SMALL, cfg)
        b, hb = train(tiny_dataset, SMALL, cfg)
        assert ha.val_loss == hb.val_loss
        for k in a.store.names():
            assert np.array_equal(a.store[k], b.store[k])

    def test_seed_changes_run(self, tiny_dataset):
        _, ha = train(tiny_dataset, SMALL, TrainConfig(max_epochs=2, seed=1))
        _, hb = train(tiny_dataset, SMALL, TrainConfig(max_epochs=2, seed=2))
        assert ha.val_loss != hb.val_loss

    def test_overfits_tiny_map_set(self):
        ds = generate_dataset(DatasetSpec(kinds=("chain",), models_per_structure=10), 3)
        ds.train = ds.train[:4]
        ds.validation = ds.train
        cfg = TrainConfig(lr=1e-2, max_epochs=150, window=150, batch_size=4, task=MAP)
        graphs = [build_gnn_graph(m.mrf, NODE) for m in ds.train]
        q = [targets_for(MAP, m) for m in ds.train]
        initial = evaluate_loss(init_weights(SMALL, np.random.default_rng([0, 0])), graphs, q)
        w, h = train(ds, SMALL, cfg)
        assert evaluate_loss(w, graphs, q) < 0.55 * initial

    def test_best_weights_returned(self, tiny_dataset, tmp_path):
        cfg = TrainConfig(max_epochs=6, window=2, seed=0)
        w, h = train(tiny_dataset, SMALL, cfg)
        assert h.best_val_loss == min(h.val_loss)
        assert h.stop_reason
        graphs = [build_gnn_graph(m.mrf, NODE) for m in tiny_dataset.validation]
        q = [m.marginals_p1 for m in tiny_dataset.validation]
        assert evaluate_loss(w, graphs, q) == pytest.approx(h.best_val_loss, abs=1e-10)

        save_checkpoint(tmp_path / "ck.json", w, cfg, h, {"dataset_hash": tiny_dataset.content_hash()})
        back, meta = load_checkpoint(tmp_path / "ck.json")
        assert meta["train_config"] == cfg.to_dict()
        assert meta["history"]["best_epoch"] == h.best_epoch
        assert evaluate_loss(back, graphs, q) == pytest.approx(h.best_val_loss, abs=1e-10)

    def test_empty_train_split(self, tiny_dataset):
        ds = generate_dataset(DatasetSpec(kinds=("chain",), models_per_structure=10), 3)
        ds.train = []
        with pytest.raises(TrainingError):
            train(ds, SMALL, TrainConfig(max_epochs=1))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(task="entropy")
