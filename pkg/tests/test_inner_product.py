import numpy as np
import pytest

from common.errors import DimensionError
from gmm.metrics import inner_product_relative_errors
from protocols.inner_product import (
    HashConfig,
    ProjectionSet,
    SignHash,
    angle_from_hashes,
    gram_from,
    ppd_inner_products,
    sign_hash,
    vector_owners,
)


def _correlated_vectors(n_vectors, n_rows, seed):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=n_rows)
    return base + 0.6 * rng.normal(size=(n_vectors, n_rows))


class TestSignHash:
    def test_words_round_trip(self):
        bits = np.random.default_rng(0).integers(0, 2, size=70).astype(np.uint8)
        restored = SignHash.from_words(SignHash(bits=bits).words, 70)
        np.testing.assert_array_equal(restored.bits, bits)
        assert SignHash(bits=bits).words.shape == (3,)

    def test_projection_columns_are_stable(self):
        first = ProjectionSet(seed=4, n_rows=10, n_bits=8)
        second = ProjectionSet(seed=4, n_rows=10, n_bits=16)
        np.testing.assert_array_equal(first.matrix, second.matrix[:, :8])

    def test_opposite_vectors_are_pi_apart(self):
        projections = ProjectionSet(seed=1, n_rows=20, n_bits=256)
        vector = np.random.default_rng(2).normal(size=20)
        angle = angle_from_hashes(sign_hash(vector, projections), sign_hash(-vector, projections))
        assert angle == pytest.approx(np.pi)

    def test_length_mismatch(self):
        projections = ProjectionSet(seed=1, n_rows=20, n_bits=8)
        with pytest.raises(DimensionError):
            sign_hash(np.ones(19), projections)


class TestGram:
    def test_diagonal_is_exact(self):
        vectors = _correlated_vectors(4, 50, seed=3)
        projections = ProjectionSet(seed=0, n_rows=50, n_bits=64)
        norms = np.linalg.norm(vectors, axis=1)
        estimate = gram_from([sign_hash(v, projections) for v in vectors], norms)
        np.testing.assert_allclose(np.diag(estimate.matrix), np.sum(vectors ** 2, axis=1), rtol=1e-12)
        np.testing.assert_array_equal(estimate.matrix, estimate.matrix.T)

    def test_error_shrinks_with_hash_length(self):
        vectors = _correlated_vectors(8, 200, seed=5)
        exact = vectors @ vectors.T
        norms = np.linalg.norm(vectors, axis=1)

        def mean_error(n_bits):
            projections = ProjectionSet(seed=9, n_rows=200, n_bits=n_bits)
            estimate = gram_from([sign_hash(v, projections) for v in vectors], norms)
            return inner_product_relative_errors(estimate.matrix, exact).mean()

        assert mean_error(4096) < mean_error(32)
        assert mean_error(4096) < 0.05


class TestPpdInnerProducts:
    def test_every_node_holds_the_same_estimate(self, triangle):
        vectors = _correlated_vectors(6, 40, seed=7)
        estimates = ppd_inner_products(vectors, triangle, config=HashConfig(n_bits=128, seed=2))
        assert len(estimates) == 3
        assert estimates[1].same_as(estimates[0]) and estimates[2].same_as(estimates[0])
        np.testing.assert_allclose(np.diag(estimates[0].matrix), np.sum(vectors ** 2, axis=1), rtol=1e-12)

    def test_matches_direct_hashing(self, triangle):
        vectors = _correlated_vectors(6, 40, seed=7)
        config = HashConfig(n_bits=128, seed=2)
        projections = ProjectionSet(config.seed, 40, config.n_bits)
        direct = gram_from([sign_hash(v, projections) for v in vectors], np.linalg.norm(vectors, axis=1))
        np.testing.assert_array_equal(ppd_inner_products(vectors, triangle, config=config)[0].matrix, direct.matrix)

    def test_wrong_vector_count(self, triangle):
        with pytest.raises(DimensionError):
            ppd_inner_products(np.ones((5, 10)), triangle)

    def test_owners_pair_power_and_forecast(self):
        assert vector_owners(3) == [0, 1, 2, 0, 1, 2]
