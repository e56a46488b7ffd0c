import numpy as np
import pytest

from common.errors import ComponentCollapseError, DimensionError
from gmm.em import EmConfig, e_step, fit, m_step, random_responsibilities
from gmm.mixture import GmmParams
from protocols.distributed_em import (
    DistributedTrace,
    PublicKnowledge,
    VerticalSlice,
    distributed_e_step,
    distributed_m_step,
    local_first_sum_term,
    local_first_sum_terms,
    local_second_sum_terms,
    ppd_em_fit,
    precision_matrices,
    stacked_observations,
)
from processors.data_partitioner import partition_vertical
from processors.fit_comparator import marginal_rse_frame
from protocols.topology import Topology
from protocols.transport import ExactTransport, ProtocolConfig, ProtocolTransport
from simnet.audit import audit_privacy
from simnet.network import FailurePlan, MessageKind
from sources.synthetic_source import make_synthetic


def _slices(data):
    M = data.shape[1] // 2
    return [VerticalSlice(node=m, power=data[:, m], forecast=data[:, M + m]) for m in range(M)]


@pytest.fixture
def pair():
    return Topology(2, [(0, 1)])


class TestVerticalSlice:
    def test_columns_must_align(self):
        with pytest.raises(DimensionError):
            VerticalSlice(node=0, power=np.zeros(4), forecast=np.zeros(3))

    def test_stacking_restores_rows(self, two_farm_data):
        np.testing.assert_array_equal(stacked_observations(_slices(two_farm_data)), two_farm_data)

    def test_out_of_order_slices_rejected(self, two_farm_data, two_farm_params):
        slices = _slices(two_farm_data)[::-1]
        with pytest.raises(ValueError):
            distributed_e_step(slices, two_farm_params, ExactTransport(2))


class TestLocalTerms:
    def test_first_sum_terms_add_up_to_tau(self, two_farm_params, two_farm_data):
        slices = _slices(two_farm_data)
        precisions, _ = precision_matrices(two_farm_params)
        total = sum(local_first_sum_terms(s, two_farm_params, precisions) for s in slices)
        for j in range(2):
            expected = (two_farm_data - two_farm_params.means[j]) @ precisions[j]
            np.testing.assert_allclose(total[j], expected, rtol=1e-10, atol=1e-10)

    def test_single_term_matches_batch(self, two_farm_params, two_farm_data):
        data_slice = _slices(two_farm_data)[1]
        precisions, _ = precision_matrices(two_farm_params)
        batch = local_first_sum_terms(data_slice, two_farm_params, precisions)
        assert local_first_sum_term(data_slice, two_farm_params, j=1, n=5, i=3) == pytest.approx(batch[1, 5, 3])

    def test_second_sum_terms_add_up_to_the_exponent(self, two_farm_params, two_farm_data):
        slices = _slices(two_farm_data)
        precisions, _ = precision_matrices(two_farm_params)
        tau = sum(local_first_sum_terms(s, two_farm_params, precisions) for s in slices)
        exponent = sum(local_second_sum_terms(s, two_farm_params, tau) for s in slices)
        centered = two_farm_data - two_farm_params.means[0]
        expected = np.einsum("nd,de,ne->n", centered, precisions[0], centered)
        np.testing.assert_allclose(exponent[0], expected, rtol=1e-10)


class TestExactSteps:
    def test_e_step_matches_centralized(self, two_farm_params, two_farm_data):
        knowledge = distributed_e_step(_slices(two_farm_data), two_farm_params, ExactTransport(2))
        resp, log_likelihood = e_step(two_farm_data, two_farm_params, return_log_likelihood=True)
        np.testing.assert_allclose(knowledge[0].responsibilities, resp, rtol=1e-9, atol=1e-12)
        assert knowledge[0].log_likelihood == pytest.approx(log_likelihood, rel=1e-10)
        assert knowledge[1].same_as(knowledge[0])

    def test_single_component_is_certain(self, two_farm_data):
        single = m_step(two_farm_data, np.ones((1, two_farm_data.shape[0])))
        knowledge = distributed_e_step(_slices(two_farm_data), single, ExactTransport(2))
        np.testing.assert_allclose(knowledge[0].responsibilities, 1.0)

    def test_m_step_matches_centralized(self, two_farm_params, two_farm_data):
        resp = e_step(two_farm_data, two_farm_params)
        node_params = distributed_m_step(_slices(two_farm_data), resp, ExactTransport(2))
        expected = m_step(two_farm_data, resp)
        np.testing.assert_allclose(node_params[0].weights, expected.weights, rtol=1e-12)
        np.testing.assert_allclose(node_params[0].means, expected.means, rtol=1e-10)
        np.testing.assert_allclose(node_params[0].covariances, expected.covariances, rtol=1e-8, atol=1e-12)
        assert node_params[1].same_as(node_params[0])

    def test_normalized_responsibilities(self, two_farm_params, two_farm_data):
        knowledge = distributed_e_step(_slices(two_farm_data), two_farm_params, ExactTransport(2))[0]
        np.testing.assert_allclose(knowledge.normalized.sum(axis=1), 1.0)

    def test_collapsed_component(self, two_farm_data):
        resp = np.zeros((2, two_farm_data.shape[0]))
        resp[1] = 1.0
        with pytest.raises(ComponentCollapseError):
            distributed_m_step(_slices(two_farm_data), resp, ExactTransport(2))

    def test_parameter_and_data_farms_must_match(self, two_farm_params, small_slices):
        with pytest.raises(DimensionError):
            distributed_e_step(small_slices, two_farm_params, ExactTransport(3))


class TestPpdEmFit:
    def test_exact_fit_tracks_centralized_fit(self, two_farm_data, pair):
        config = EmConfig(n_components=2, max_iter=15, seed=1, init="random-responsibilities")
        init = m_step(two_farm_data, random_responsibilities(2, two_farm_data.shape[0], config.seed))
        _, central = fit(two_farm_data, config, init=init)
        node_params, trace = ppd_em_fit(_slices(two_farm_data), pair, config)
        assert trace.transport == "exact-oracle"
        shared = min(trace.iterations, central.iterations)
        assert shared >= 3
        np.testing.assert_allclose(trace.log_likelihoods[:shared], central.log_likelihoods[:shared], rtol=1e-8)
        assert node_params[0].same_as(node_params[1])

    def test_shared_init_is_respected(self, two_farm_data, two_farm_params, pair):
        _, trace = ppd_em_fit(_slices(two_farm_data), pair, EmConfig(n_components=2, max_iter=1), init=two_farm_params)
        _, expected = e_step(two_farm_data, two_farm_params, return_log_likelihood=True)
        assert trace.log_likelihoods[0] == pytest.approx(expected, rel=1e-10)

    def test_topology_size_must_match(self, small_slices, pair):
        with pytest.raises(DimensionError):
            ppd_em_fit(small_slices, pair, EmConfig(n_components=2, init="random-responsibilities"))

    def test_trace_summary(self):
        trace = DistributedTrace(log_likelihoods=[-3.0, -2.0], inner_product_errors=[0.1, 0.3])
        summary = trace.to_dict()
        assert summary["iterations"] == 2
        assert summary["mean_inner_product_error"] == pytest.approx(0.2)

    @pytest.mark.slow
    def test_full_protocol_farms_agree(self, small_slices, triangle):
        config = EmConfig(n_components=2, max_iter=3, seed=0, cov_floor=1e-3, init="random-responsibilities")
        protocol = ProtocolConfig(mode="full-protocol", n_bits=512, encrypt_first_round=False, audit=True)
        transport = ProtocolTransport(triangle, protocol)
        transport.network.register_raw(stacked_observations(small_slices))
        node_params, trace = ppd_em_fit(small_slices, triangle, config, protocol, transport=transport)

        assert all(p.same_as(node_params[0]) for p in node_params)
        assert trace.transport == "full-protocol"
        assert np.all(np.isfinite(trace.log_likelihoods))
        assert trace.messages == sorted(trace.messages) and trace.messages[-1] > 0
        assert len(trace.inner_product_errors) > 0
        node_params[0].validate()
        report = audit_privacy(transport.network.privacy_log)
        assert report.violations == []
        assert report.unprotected_shares > 0 and not report.clean

    @pytest.mark.slow
    def test_full_protocol_e_step_is_close_to_exact(self, small_slices, triangle):
        data = stacked_observations(small_slices)
        params = m_step(data, random_responsibilities(2, data.shape[0], 0), floor=1e-3)
        transport = ProtocolTransport(triangle, ProtocolConfig(mode="full-protocol", encrypt_first_round=False))
        knowledge = distributed_e_step(small_slices, params, transport)
        _, exact = e_step(data, params, return_log_likelihood=True)
        assert knowledge[0].log_likelihood == pytest.approx(exact, rel=1e-6)
        assert all(k.same_as(knowledge[0]) for k in knowledge)


@pytest.fixture(scope="module")
def case_study_slices():
    table, _ = make_synthetic(n_farms=9, n_rows=60, seed=5)
    return partition_vertical(table)


def _full_protocol_fit(slices, topology, failure_plan=None, **protocol):
    config = EmConfig(n_components=2, max_iter=2, seed=0, cov_floor=1e-3, init="random-responsibilities")
    transport = ProtocolTransport(topology, ProtocolConfig(mode="full-protocol", **protocol), failure_plan)
    transport.network.register_raw(stacked_observations(slices))
    node_params, trace = ppd_em_fit(slices, topology, config, transport=transport)
    return node_params, trace, transport


@pytest.mark.slow
class TestFullProtocolRuns:
    def test_encrypted_fit(self, small_slices, triangle):
        node_params, trace, transport = _full_protocol_fit(small_slices, triangle, key_bits=256, private_seeds=(7, 8, 9))
        plain_params, plain_trace, _ = _full_protocol_fit(small_slices, triangle, encrypt_first_round=False)

        assert all(p.same_as(node_params[0]) for p in node_params)
        report = audit_privacy(transport.network.privacy_log)
        assert report.clean
        assert report.counts_by_kind[MessageKind.CIPHERTEXT.value] > 0
        np.testing.assert_allclose(trace.log_likelihoods, plain_trace.log_likelihoods, rtol=1e-6)
        np.testing.assert_allclose(node_params[0].means, plain_params[0].means, rtol=1e-6, atol=1e-9)

    def test_case_study_fit(self, case_study_slices, case_study):
        node_params, trace, transport = _full_protocol_fit(case_study_slices, case_study, encrypt_first_round=False)

        assert all(p.same_as(node_params[0]) for p in node_params)
        assert node_params[0].dim == 18
        node_params[0].validate()
        assert np.all(np.isfinite(trace.log_likelihoods))
        assert trace.messages[-1] > 0
        assert audit_privacy(transport.network.privacy_log).violations == []

    def test_mid_run_line_cut_keeps_the_fit(self, case_study_slices, case_study):
        baseline, _, uncut = _full_protocol_fit(case_study_slices, case_study, encrypt_first_round=False)
        edge = case_study.edges[0]
        cut_tick = uncut.network.tick // 2
        plan = FailurePlan.single_cut(edge, tick=cut_tick)
        node_params, _, transport = _full_protocol_fit(case_study_slices, case_study, plan, encrypt_first_round=False)

        assert transport.network.tag == "connected"
        assert transport.network.tick > cut_tick
        carried = {(e.src, e.dst) for e in transport.network.privacy_log.entries if e.tick >= cut_tick}
        assert edge not in carried and edge[::-1] not in carried
        assert all(p.same_as(node_params[0]) for p in node_params)
        frame = marginal_rse_frame(baseline[0], node_params, stacked_observations(case_study_slices))
        assert frame["cdf_rse"].max() < 1e-2


class TestPublicKnowledge:
    def test_same_as_without_responsibilities(self, two_farm_params):
        assert PublicKnowledge(params=two_farm_params).same_as(PublicKnowledge(params=two_farm_params))
        copy = GmmParams.from_dict(two_farm_params.to_dict())
        assert PublicKnowledge(params=copy).same_as(PublicKnowledge(params=two_farm_params))
