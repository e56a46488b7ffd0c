import numpy as np
import pytest

from common.errors import BroadcastIntegrityError, DimensionError, DisconnectedTopologyError, NonConvergenceError
from protocols.topology import (
    Topology,
    broadcast_exact,
    consensus_broadcast,
    effective_weights,
    float_words,
    metropolis_weights,
    min_agreement,
    run_consensus,
    words_float,
)
from simnet.network import FailurePlan, Network


class TestTopology:
    def test_case_study_shape(self, case_study):
        assert case_study.n_nodes == 9
        assert len(case_study.edges) == 18
        assert all(case_study.degree(m) == 4 for m in range(9))
        assert case_study.neighbors(0) == [1, 2, 7, 8]
        assert case_study.diameter == 2

    def test_disconnected_graph_rejected(self):
        with pytest.raises(DisconnectedTopologyError):
            Topology(4, [(0, 1), (2, 3)])

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError):
            Topology(2, [(0, 1), (1, 1)])

    def test_edge_outside_range_rejected(self):
        with pytest.raises(ValueError):
            Topology(2, [(0, 2)])

    def test_coordinates_threshold(self):
        topology = Topology.from_coordinates([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], threshold=1.5)
        assert topology.edges == ((0, 1), (1, 2))

    def test_cut_connectivity(self):
        ring = Topology.ring(4)
        assert ring.is_connected_without([(0, 1)])
        assert not Topology(3, [(0, 1), (1, 2)]).is_connected_without([(0, 1)])
        assert len(ring.without_edges([(1, 0)]).edges) == 3

    def test_random_connected_is_seeded(self):
        assert Topology.random_connected(8, seed=5).edges == Topology.random_connected(8, seed=5).edges

    def test_json_round_trip(self, case_study, tmp_path):
        path = case_study.to_json(tmp_path / "topology.json")
        assert Topology.from_json(path).edges == case_study.edges

    def test_single_node(self):
        topology = Topology.ring(1)
        assert topology.edges == ()
        assert topology.diameter == 0


class TestMetropolisWeights:
    def test_doubly_stochastic_and_symmetric(self, case_study):
        weights = metropolis_weights(case_study)
        np.testing.assert_allclose(weights.sum(axis=0), 1.0)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0)
        np.testing.assert_array_equal(weights, weights.T)
        assert weights[0, 1] == pytest.approx(0.2)
        assert weights[0, 4] == 0.0

    def test_inactive_edge_folds_into_self_weight(self, case_study):
        weights = metropolis_weights(case_study)
        active = [e for e in case_study.edges if e != (0, 1)]
        effective = effective_weights(weights, active)
        assert effective[0, 1] == 0.0
        assert effective[0, 0] == pytest.approx(weights[0, 0] + weights[0, 1])
        np.testing.assert_allclose(effective.sum(axis=1), 1.0)


class TestConsensus:
    def test_reaches_the_average(self, case_study):
        weights = metropolis_weights(case_study)
        initial = np.arange(9.0).reshape(9, 1)
        result = run_consensus(initial, weights, tolerance=1e-12)
        np.testing.assert_allclose(result.values, 4.0, atol=1e-10)
        assert result.spreads[-1] < result.spreads[0]

    def test_fixed_rounds_never_raise(self, case_study):
        result = run_consensus(np.arange(9.0), metropolis_weights(case_study), rounds=3, keep_history=True)
        assert result.rounds == 3
        assert len(result.history) == 4

    def test_round_limit(self, case_study):
        with pytest.raises(NonConvergenceError) as excinfo:
            run_consensus(np.arange(9.0), metropolis_weights(case_study), tolerance=1e-12, max_rounds=2)
        assert excinfo.value.rounds == 2

    def test_absolute_threshold_ignores_payload_scale(self, case_study):
        initial = np.arange(9.0).reshape(9, 1) * 1e9
        result = run_consensus(initial, metropolis_weights(case_study), tolerance=1e-4, relative=False)
        assert result.spreads[-1] < 1e-4
        scaled = run_consensus(initial, metropolis_weights(case_study), tolerance=1e-4)
        assert scaled.rounds < result.rounds

    def test_node_count_mismatch(self, case_study):
        with pytest.raises(DimensionError):
            run_consensus(np.zeros(4), metropolis_weights(case_study))

    def test_min_agreement_equalizes_bits(self, case_study):
        weights = metropolis_weights(case_study)
        values = 1.0 + np.random.default_rng(0).normal(scale=1e-12, size=(9, 3))
        agreed = min_agreement(values, weights)
        for row in agreed:
            np.testing.assert_array_equal(row, values.min(axis=0))


class TestBroadcast:
    def test_integer_broadcast_recovers_every_entry(self, case_study):
        weights = metropolis_weights(case_study)
        payloads = np.diag(np.arange(1.0, 10.0) * 1000)
        recovered = consensus_broadcast(payloads, weights, integer=True)
        for row in recovered:
            np.testing.assert_array_equal(row, np.arange(1.0, 10.0) * 1000)

    def test_integer_chunks_limited_to_32_bits(self, triangle):
        with pytest.raises(BroadcastIntegrityError):
            consensus_broadcast(np.diag([2.0 ** 33, 1.0, 1.0]), metropolis_weights(triangle), integer=True)

    def test_float_words_round_trip(self):
        values = np.array([0.1, -2.5e-300, np.pi, 0.0])
        np.testing.assert_array_equal(words_float(float_words(values)), values)

    def test_exact_broadcast_is_bit_identical(self, case_study):
        owned = np.random.default_rng(1).normal(size=(9, 2))
        copies = broadcast_exact(owned, metropolis_weights(case_study))
        assert copies.shape == (9, 9, 2)
        for r in range(9):
            assert copies[r].tobytes() == owned.tobytes()

    @pytest.mark.parametrize("seed", range(5))
    def test_exact_broadcast_on_the_case_study(self, case_study, seed):
        owned = np.random.default_rng(seed).normal(size=(9, 3))
        copies = broadcast_exact(owned, metropolis_weights(case_study))
        for r in range(9):
            assert copies[r].tobytes() == owned.tobytes()

    def test_exact_broadcast_on_a_long_ring(self):
        ring = Topology.ring(12)
        owned = np.random.default_rng(7).uniform(size=(12, 2))
        copies = broadcast_exact(owned, metropolis_weights(ring))
        for r in range(12):
            assert copies[r].tobytes() == owned.tobytes()

    def test_exact_broadcast_survives_a_cut_line(self, case_study):
        network = Network(case_study, FailurePlan.single_cut(case_study.edges[0], tick=5))
        owned = np.random.default_rng(3).normal(size=(9, 2))
        copies = broadcast_exact(owned, metropolis_weights(case_study), network=network)
        for r in range(9):
            assert copies[r].tobytes() == owned.tobytes()
