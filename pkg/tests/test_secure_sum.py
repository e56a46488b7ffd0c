import numpy as np
import pytest

from common.errors import KeyMismatchError, ProtocolError
from common.seeding import derive_seed
from protocols.paillier import Ciphertext, decrypt, keygen
from protocols.secure_sum import Keyring, SumConfig, designated_neighbor, plaintext_first_round, ppd_sum, secure_first_round
from protocols.topology import Topology, metropolis_weights

SECRETS = (501, 502, 503)
SMALL_KEYS = SumConfig(encrypt=True, key_bits=128, private_seeds=SECRETS)


class TestPpdSum:
    def test_plaintext_sum_matches(self, case_study):
        summands = np.arange(1.0, 10.0) / 7
        result = ppd_sum(summands, case_study, config=SumConfig(encrypt=False))
        np.testing.assert_allclose(result.values, summands.sum(), rtol=1e-9)

    def test_encrypted_sum_matches(self, triangle):
        summands = np.array([[0.5, -1.25], [2.0, 0.125], [-0.75, 3.0]])
        result = ppd_sum(summands, triangle, config=SMALL_KEYS)
        assert result.values.shape == (3, 2)
        for row in result.values:
            np.testing.assert_allclose(row, summands.sum(axis=0), atol=1e-8)
        assert len(result.transcripts) == 3

    def test_node_copies_are_identical(self, case_study):
        summands = np.random.default_rng(2).normal(size=9)
        result = ppd_sum(summands, case_study, config=SumConfig(encrypt=False))
        assert len({row.tobytes() for row in np.atleast_2d(result.values.reshape(9, -1))}) == 1

    def test_fixed_round_budget(self, case_study):
        result = ppd_sum(np.ones(9), case_study, config=SumConfig(encrypt=False, rounds=5, agreement=False))
        assert result.rounds == 5

    def test_single_node_returns_its_value(self):
        result = ppd_sum(np.array([4.5]), Topology.ring(1))
        assert result.values.tolist() == [4.5]
        assert result.rounds == 0

    def test_non_finite_summand_rejected(self, triangle):
        with pytest.raises(ValueError):
            ppd_sum(np.array([1.0, np.inf, 0.0]), triangle, config=SumConfig(encrypt=False))


class TestSecureFirstRound:
    def test_matches_plaintext_round(self, triangle):
        weights = metropolis_weights(triangle)
        values = np.array([[1.0], [2.0], [4.0]])
        keyring = Keyring(bits=128, private_seeds=SECRETS)
        secure, transcripts = secure_first_round(values, weights, SMALL_KEYS, keyring)
        np.testing.assert_allclose(secure, plaintext_first_round(values, weights), atol=1e-10)
        assert [t.designated for t in transcripts] == [1, 0, 0]

    def test_designated_neighbour_sees_only_masked_sums(self, triangle):
        weights = metropolis_weights(triangle)
        values = np.array([[1.0], [2.0], [4.0]])
        _, transcripts = secure_first_round(values, weights, SMALL_KEYS, Keyring(bits=128, private_seeds=SECRETS))
        for transcript in transcripts:
            np.testing.assert_allclose(
                transcript.masked_values - transcript.mask_values, transcript.result, atol=1e-10
            )
            assert not np.allclose(transcript.masked_values, transcript.result)

    def test_keyring_reuses_keys(self):
        keyring = Keyring(bits=128)
        assert keyring.keypair_for(2, invocation=0) is keyring.keypair_for(2, invocation=7)
        fresh = Keyring(bits=128, reuse=False)
        assert fresh.keypair_for(2, 0).public_key.n != fresh.keypair_for(2, 1).public_key.n

    def test_isolated_node_has_no_designated_neighbour(self):
        with pytest.raises(ProtocolError):
            designated_neighbor(3, [])


class TestKeyring:
    def test_shared_seed_cannot_rebuild_a_farm_key(self, triangle):
        weights = metropolis_weights(triangle)
        values = np.array([[1.0], [2.0], [4.0]])
        _, transcripts = secure_first_round(values, weights, SumConfig(encrypt=True, key_bits=128), Keyring(bits=128))
        received = transcripts[0].neighbor_ciphertexts
        for shared_seed in (0, 5):
            outsider = keygen(128, derive_seed(shared_seed, "paillier/1"))
            assert outsider.public_key.n != transcripts[0].codec.n
            with pytest.raises(KeyMismatchError):
                decrypt(received[1][0], outsider)
            relabelled = Ciphertext(value=received[1][0].value, public_key=outsider.public_key)
            assert decrypt(relabelled, outsider) != transcripts[0].codec.encode(weights[0, 1] * 2.0)

    def test_fresh_keyrings_never_collide(self):
        assert Keyring(bits=128).keypair_for(1).public_key.n != Keyring(bits=128).keypair_for(1).public_key.n

    def test_private_seeds_reproduce_a_farm_key(self):
        first = Keyring(bits=128, private_seeds=SECRETS).keypair_for(2)
        second = Keyring(bits=128, private_seeds=SECRETS).keypair_for(2)
        assert first.public_key.n == second.public_key.n
        assert Keyring(bits=128, private_seeds=SECRETS).secret(0) == 501

    def test_nonces_and_masks_follow_each_farm_secret(self, triangle):
        weights = metropolis_weights(triangle)
        values = np.array([[1.0], [2.0], [4.0]])
        _, first = secure_first_round(values, weights, SMALL_KEYS, Keyring(bits=128, private_seeds=SECRETS))
        _, second = secure_first_round(values, weights, SMALL_KEYS, Keyring(bits=128, private_seeds=(501, 502, 999)))
        assert first[0].masks == second[0].masks
        assert first[2].masks != second[2].masks
