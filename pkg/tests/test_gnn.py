import json

import numpy as np
import pytest

from conftest import random_model
from mrfgnn.autodiff import ShapeError, Tape
from mrfgnn.gnn import (MSG, NODE, GNNArchitecture, GNNWeights, batch_graphs, build_gnn_graph,
                        convergence_trace, forward, init_weights, predict, zero_weights)
from mrfgnn.model import BinaryMRF
from mrfgnn.training import cross_entropy_loss
from reference import ReferenceGNN, finite_difference_grads, relative_error

KINDS = [NODE, MSG]


class TestArchitecture:
    def test_shapes(self):
        s = GNNArchitecture(NODE).shapes()
        assert s["msg.W0"] == (2 * 5 + 3, 64)
        assert s["msg.W2"] == (64, 5)
        assert s["gru.Wz"] == (5, 5) and s["gru.Uz"] == (5, 5)
        assert s["out.W2"] == (64, 1)
        assert GNNArchitecture(MSG).shapes()["msg.W0"] == (5 + 3, 64)

    def test_parameter_count_is_modest(self):
        n = sum(int(np.prod(v)) for v in GNNArchitecture(NODE).shapes().values())
        assert 5_000 < n < 20_000

    def test_rejects_bad_kind(self):
        with pytest.raises(ValueError):
            GNNArchitecture("edge-gnn")


class TestGraphs:
    def test_node_graph(self, triangle):
        g = build_gnn_graph(triangle, NODE)
        assert g.num_nodes == 3 and g.num_edges == 6
        assert sorted(g.in_sources(0)) == [1, 2]
        k = int(np.flatnonzero((g.src == 1) & (g.dst == 0))[0])
        assert g.features[k].tolist() == [0.5, -0.2, 0.1]

    def test_msg_graph_excludes_reverse(self):
        m = BinaryMRF.from_edges(4, [(0, 1), (1, 2), (1, 3)], [1.0, 2.0, 3.0], [0.0] * 4)
        g = build_gnn_graph(m, MSG)
        assert g.num_nodes == 6
        # node 2e is i -> j; message 0->1 (node 0) feeds 1->2 (node 2) and 1->3 (node 4)
        assert g.in_sources(2) == [0, 5]
        assert g.in_sources(4) == [0, 3]
        assert g.in_sources(1) == [3, 5]
        # edge-count identity: sum over directed (i -> j) of deg(i) - 1
        assert g.num_edges == sum(d * (d - 1) for d in (1, 3, 1, 1))

    def test_batch_offsets(self, triangle):
        a = build_gnn_graph(triangle, NODE)
        b = batch_graphs([a, a])
        assert b.num_nodes == 6 and b.num_edges == 12
        assert b.graph_of_var.tolist() == [0, 0, 0, 1, 1, 1]
        assert b.src[6:].min() >= 3

    def test_batch_kind_mismatch(self, triangle):
        with pytest.raises(ValueError):
            batch_graphs([build_gnn_graph(triangle, NODE), build_gnn_graph(triangle, MSG)])


class TestForward:
    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_weights_give_half(self, kind):
        m = random_model("grid", 9, 0)
        assert np.all(predict(m, zero_weights(GNNArchitecture(kind))) == 0.5)

    @pytest.mark.parametrize("kind", KINDS)
    def test_predictions_in_open_interval(self, kind):
        w = init_weights(GNNArchitecture(kind), 1)
        p = predict(random_model("complete", 9, 1), w)
        assert p.shape == (9,) and np.all((p > 0) & (p < 1))

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("structure", ["grid", "wheel", "dense_50"])
    def test_permutation_equivariance(self, kind, structure):
        m = random_model(structure, 9, 2)
        w = init_weights(GNNArchitecture(kind), 3)
        perm = np.random.default_rng(4).permutation(9)
        p = predict(m, w)
        pp = predict(m.permuted(perm), w)
        # only summation order differs
        np.testing.assert_allclose(pp[perm], p, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("kind", KINDS)
    def test_batching_equals_single(self, kind):
        w = init_weights(GNNArchitecture(kind), 5)
        models = [random_model(s, 9, 6) for s in ("chain", "grid", "complete")]
        single = np.concatenate([predict(m, w) for m in models])
        batched = forward(batch_graphs([build_gnn_graph(m, kind) for m in models]), w).predictions
        np.testing.assert_allclose(batched, single, atol=1e-12)

    def test_T_zero_reads_initial_state(self, triangle):
        w = init_weights(GNNArchitecture(NODE), 0)
        a = predict(triangle, w, T=0)
        b = predict(random_model("chain", 3, 0), w, T=0)
        assert np.allclose(a, a[0]) and np.allclose(a, b)

    def test_kind_mismatch(self, triangle):
        with pytest.raises(ShapeError):
            forward(build_gnn_graph(triangle, MSG), init_weights(GNNArchitecture(NODE), 0))

    def test_convergence_trace_shape(self):
        w = init_weights(GNNArchitecture(NODE), 0)
        tr = forward(build_gnn_graph(random_model("grid", 9, 0), NODE), w, T=7)
        c = convergence_trace(tr)
        assert c.shape == (7, 2) and np.all(c >= 0)

    def test_deterministic(self):
        m = random_model("wheel", 9, 3)
        a = predict(m, init_weights(GNNArchitecture(MSG), 8))
        b = predict(m, init_weights(GNNArchitecture(MSG), 8))
        assert np.array_equal(a, b)


class TestWeights:
    def test_init_statistics(self):
        w = init_weights(GNNArchitecture(NODE), 0)
        W = w.store["msg.W1"]
        bound = np.sqrt(6 / 128)
        assert np.abs(W).max() <= bound
        assert W.std() == pytest.approx(bound / np.sqrt(3), rel=0.05)
        assert np.all(w.store["msg.b1"] == 0)

    def test_round_trip(self, tmp_path):
        w = init_weights(GNNArchitecture(MSG, T=4), 2)
        w.save(tmp_path / "w.json")
        back = GNNWeights.load(tmp_path / "w.json")
        assert back.arch == w.arch
        for k in w.store.names():
            assert np.array_equal(back.store[k], w.store[k])

    def test_shape_mismatch_on_load(self, tmp_path):
        w = init_weights(GNNArchitecture(NODE), 2)
        d = w.to_dict()
        d["tensors"]["gru.Wz"]["shape"] = [4, 5]
        d["tensors"]["gru.Wz"]["data"] = d["tensors"]["gru.Wz"]["data"][:20]
        (tmp_path / "w.json").write_text(json.dumps(d))
        with pytest.raises(ShapeError, match="gru.Wz"):
            GNNWeights.load(tmp_path / "w.json")


class TestGradients:
    @pytest.mark.parametrize("kind", KINDS)
    def test_every_parameter_gets_gradient(self, kind):
        w = init_weights(GNNArchitecture(kind), 1)
        g = build_gnn_graph(random_model("grid", 9, 1), kind)
        tape = Tape()
        loss = cross_entropy_loss(tape, forward(g, w, tape).logits, np.full(9, 0.3))
        grads = tape.backward(loss, w.store)
        assert set(grads) == set(w.store.names())
        for name, v in grads.items():
            assert np.all(np.isfinite(v))
            assert np.any(v != 0), name

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_finite_differences(self, kind):
        arch = GNNArchitecture(kind, T=3)
        w = init_weights(arch, 11)
        m = random_model("cycle", 4, 12)
        g = build_gnn_graph(m, kind)
        q = np.random.default_rng(13).uniform(0.1, 0.9, 4)
        tape = Tape()
        loss = cross_entropy_loss(tape, forward(g, w, tape).logits, q)
        grads = tape.backward(loss, w.store)

        ref = ReferenceGNN(kind, 4, g.src, g.dst, g.features, g.readout, g.num_nodes, 3, 3)
        params = {k: w.store[k] for k in w.store.names()}
        assert ref.loss({k: v[None] for k, v in params.items()}, q)[0] == pytest.approx(
            float(loss.value), rel=1e-12)
        fd, smooth = finite_difference_grads(ref, params, q)
        total = sum(v.size for v in smooth.values())
        assert sum(int(v.sum()) for v in smooth.values()) > 0.95 * total
        worst = max(relative_error(grads[k][smooth[k]], fd[k][smooth[k]]).max() for k in params)
        assert worst < 1e-4
