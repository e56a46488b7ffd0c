import numpy as np
import pytest

from common.errors import SimulationError
from protocols.secure_sum import SumConfig, ppd_sum
from protocols.topology import Topology
from simnet.audit import audit_privacy
from simnet.network import FailurePlan, Network, PrivacyLog
from simnet.programs import GatherProgram, IdleProgram, SimConfig, run, secure_sum_programs

SMALL_KEYS = SumConfig(encrypt=True, key_bits=128, private_seeds=(31, 32, 33))


class TestNetwork:
    def test_cut_edge_refuses_messages(self, triangle):
        network = Network(triangle, FailurePlan.single_cut((0, 1), tick=1))
        network.send(0, 1, "CONSENSUS_VALUE", phase="test", values=[0.5])
        network.advance()
        with pytest.raises(SimulationError):
            network.send(0, 1, "CONSENSUS_VALUE", phase="test", values=[0.5])
        assert network.tag == "connected"

    def test_disconnecting_plan_is_tagged(self):
        path = Topology(3, [(0, 1), (1, 2)])
        assert FailurePlan.single_cut((1, 2)).check(path) == "disconnected"

    def test_unknown_cut_rejected(self, triangle):
        with pytest.raises(ValueError):
            FailurePlan.single_cut((0, 5)).check(triangle)

    def test_accounting_counts_floats(self, triangle):
        network = Network(triangle)
        network.send(0, 2, "CONSENSUS_VALUE", phase="p", values=np.zeros(3))
        network.send(2, 0, "NORM_VALUE", phase="q", values=np.zeros(1))
        summary = network.accounting.to_dict()
        assert summary["messages"] == 2
        assert summary["bytes"] == 32
        assert summary["by_kind"]["NORM_VALUE"] == {"messages": 1, "bytes": 8}

    def test_failure_plan_round_trip(self):
        plan = FailurePlan.single_cut((3, 1), tick=4)
        assert FailurePlan.from_dict(plan.to_dict()).cuts == (((1, 3), 4),)


class TestRun:
    def test_idle_nodes_finish_at_tick_zero(self, triangle):
        result = run(SimConfig(topology=triangle), [IdleProgram(m) for m in range(3)])
        assert result.ticks == 0
        assert result.accounting.messages == 0

    def test_program_count_must_match(self, triangle):
        with pytest.raises(ValueError):
            run(SimConfig(topology=triangle), [IdleProgram(0)])

    def test_plaintext_programs_match_ppd_sum(self, case_study):
        summands = np.random.default_rng(4).normal(size=(9, 2))
        config = SumConfig(encrypt=False)
        result = run(SimConfig(topology=case_study), secure_sum_programs(summands, case_study, 40, config))
        expected = ppd_sum(summands, case_study, config=SumConfig(encrypt=False, rounds=41))
        np.testing.assert_allclose(np.stack(result.results), expected.values, rtol=1e-12)

    def test_encrypted_programs_reach_the_sum(self, triangle):
        summands = np.array([[1.5], [-0.25], [2.0]])
        result = run(SimConfig(topology=triangle), secure_sum_programs(summands, triangle, 5, SMALL_KEYS))
        for value in result.results:
            np.testing.assert_allclose(value, [3.25], atol=1e-8)
        assert audit_privacy(result.privacy_log).counts_by_kind["CIPHERTEXT"] == 6

    def test_transcripts_are_deterministic(self, triangle):
        summands = np.array([[1.5], [-0.25], [2.0]])
        first = run(SimConfig(topology=triangle), secure_sum_programs(summands, triangle, 3, SMALL_KEYS))
        second = run(SimConfig(topology=triangle), secure_sum_programs(summands, triangle, 3, SMALL_KEYS))
        assert first.transcript_hash == second.transcript_hash

    def test_transcript_export(self, triangle, tmp_path):
        summands = np.array([[1.0], [2.0], [3.0]])
        result = run(SimConfig(topology=triangle), secure_sum_programs(summands, triangle, 2, SumConfig(encrypt=False)))
        path = result.network.export_ndjson(tmp_path / "transcript.ndjson")
        lines = path.read_text().splitlines()
        assert len(lines) == result.accounting.messages


class TestPrivacyAudit:
    def test_gathering_raw_columns_is_flagged(self, triangle):
        data = np.random.default_rng(6).uniform(0.05, 0.95, size=(3, 10))
        result = run(
            SimConfig(topology=triangle, raw_values=data),
            [GatherProgram(m, data[m]) for m in range(3)],
        )
        report = audit_privacy(result.privacy_log)
        assert not report.clean
        assert len(report.violations) == 2
        np.testing.assert_array_equal(result.results[0], data)

    def test_secure_sum_is_clean(self, triangle):
        data = np.random.default_rng(6).uniform(0.05, 0.95, size=(3, 1))
        result = run(
            SimConfig(topology=triangle, raw_values=data),
            secure_sum_programs(data, triangle, 3, SMALL_KEYS),
        )
        report = audit_privacy(result.privacy_log)
        assert report.clean
        assert report.unprotected_shares == 0

    def test_plaintext_first_round_shares_are_not_clean(self, triangle):
        data = np.array([[0.2], [0.4], [0.6]])
        result = run(SimConfig(topology=triangle), secure_sum_programs(data, triangle, 1, SumConfig(encrypt=False)))
        report = audit_privacy(result.privacy_log)
        assert report.unprotected_shares == 6
        assert not report.violations
        assert not report.clean
        assert report.exposures
        assert report.to_dict()["exposures"] == report.exposures

    def test_programs_hold_only_their_own_secret(self, triangle):
        programs = secure_sum_programs(np.ones((3, 1)), triangle, 1, SMALL_KEYS)
        assert [p.secret for p in programs] == [31, 32, 33]
        assert [p.keypair.public_key for p in programs] == [programs[0].public_keys[m] for m in range(3)]

    def test_empty_log_is_clean(self):
        report = audit_privacy(PrivacyLog())
        assert report.clean
        assert report.to_dict()["counts_by_kind"] == {}
