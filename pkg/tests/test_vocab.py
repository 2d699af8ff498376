import io
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from txn2vec import vocab as V
from txn2vec.errors import DataError
from txn2vec.pairing import TransactionPair, make_pair


def P(a, b):
    return TransactionPair(a, b)


class TestBuildVocab:
    def test_counts_and_edges_small(self):
        voc, edges = V.build_vocab([P("A", "B"), P("A", "C")])
        assert len(voc) == 3
        assert voc.counts[voc.id_of("A")] == 2
        assert voc.counts[voc.id_of("B")] == 1
        assert voc.counts[voc.id_of("C")] == 1
        assert len(edges) == 2
        assert (voc.id_of("A"), voc.id_of("B")) in edges
        assert (voc.id_of("C"), voc.id_of("A")) in edges  # order-insensitive

    def test_duplicate_pairs_count_multiset_edges_set(self):
        voc, edges = V.build_vocab([P("A", "B")] * 3)
        assert len(edges) == 1
        assert voc.counts[voc.id_of("A")] == 3
        assert voc.counts[voc.id_of("B")] == 3

    def test_ids_are_dense_bijection(self, rng):
        pairs = [make_pair(f"E{rng.integers(30)}", f"F{rng.integers(30)}") for _ in range(200)]
        voc, _ = V.build_vocab(pairs)
        assert sorted(voc.key_to_id.values()) == list(range(len(voc)))
        assert all(voc.keys[i] == k for k, i in voc.key_to_id.items())
        assert (voc.counts >= 1).all()

    def test_counts_match_hash_count_oracle(self, rng):
        pairs = [make_pair(f"E{rng.integers(25)}", f"F{rng.integers(25)}") for _ in range(400)]
        voc, edges = V.build_vocab(pairs)
        oracle = Counter()
        for a, b in pairs:
            oracle[a] += 1
            oracle[b] += 1
        assert {k: voc.counts[i] for k, i in voc.key_to_id.items()} == dict(oracle)
        assert len(edges) == len({make_pair(a, b) for a, b in pairs})

    def test_empty_pairs_error(self):
        with pytest.raises(DataError, match="empty training set"):
            V.build_vocab([])

    def test_dump_format(self):
        voc, _ = V.build_vocab([P("A", "B")])
        buf = io.StringIO()
        voc.dump(buf)
        assert buf.getvalue() == "0\tA\t1\n1\tB\t1\n"


class TestEdgeSetCsr:
    def test_csr_matches_set_membership(self, rng):
        pairs = [make_pair(f"E{rng.integers(20)}", f"F{rng.integers(20)}") for _ in range(150)]
        voc, edges = V.build_vocab(pairs)
        indptr, indices = edges.neighbors_csr()
        n = len(voc)
        for a in range(n):
            neigh = set(indices[indptr[a]:indptr[a + 1]].tolist())
            for b in range(n):
                assert ((a, b) in edges) == (b in neigh)
        for a in range(n):
            row = indices[indptr[a]:indptr[a + 1]]
            assert (np.diff(row) > 0).all()  # sorted for binary search


class TestSamplingTable:
    def test_uniform_counts_any_alpha(self):
        voc = V.Vocabulary(["A", "B", "C"], np.array([7, 7, 7]))
        for alpha in (0.0, 0.5, 0.75, 1.0):
            table = V.build_sampling_table(voc, alpha)
            np.testing.assert_allclose(table.probs, 1 / 3)

    def test_closed_form_16_to_1(self):
        # 16^0.75 = 8, so P(A) = 8/9
        voc = V.Vocabulary(["A", "B"], np.array([16, 1]))
        table = V.build_sampling_table(voc, 0.75)
        np.testing.assert_allclose(table.probs, [8 / 9, 1 / 9], rtol=1e-15)

    def test_alpha_zero_uniform_regardless_of_counts(self):
        voc = V.Vocabulary(["A", "B", "C"], np.array([100, 10, 1]))
        table = V.build_sampling_table(voc, 0.0)
        np.testing.assert_allclose(table.probs, 1 / 3)

    def test_probabilities_sum_to_one(self, rng):
        counts = rng.integers(1, 10_000, size=500)
        voc = V.Vocabulary([f"E{i}" for i in range(500)], counts)
        table = V.build_sampling_table(voc, 0.75)
        assert abs(table.probs.sum() - 1.0) < 1e-12
        assert (table.probs > 0).all()

    def test_monotone_in_counts(self, rng):
        counts = rng.integers(1, 1000, size=100)
        voc = V.Vocabulary([f"E{i}" for i in range(100)], counts)
        table = V.build_sampling_table(voc, 0.75)
        order = np.argsort(counts)
        assert (np.diff(table.probs[order]) >= -1e-15).all()

    def test_alpha_out_of_range(self):
        voc = V.Vocabulary(["A"], np.array([1]))
        with pytest.raises(ValueError):
            V.build_sampling_table(voc, 1.5)

    def test_draw_frequencies_match_distribution_chi_square(self):
        # counts {8,1,1}, alpha=0.75: P = (8^.75, 1, 1) / sum
        voc = V.Vocabulary(["A", "B", "C"], np.array([8, 1, 1]))
        table = V.build_sampling_table(voc, 0.75)
        w = np.array([8**0.75, 1.0, 1.0])
        expected_p = w / w.sum()
        rng = np.random.default_rng(777)
        n = 1_000_000
        draws = np.searchsorted(table.cum, rng.random(n), side="right")
        observed = np.bincount(draws, minlength=3)
        chi2 = ((observed - n * expected_p) ** 2 / (n * expected_p)).sum()
        critical = stats.chi2.ppf(1 - 0.001, df=2)
        assert chi2 < critical, f"chi2={chi2:.2f} >= {critical:.2f}"


class TestSampleNegatives:
    def _table(self, counts, keys=None):
        keys = keys or [f"E{i}" for i in range(len(counts))]
        voc = V.Vocabulary(keys, np.asarray(counts))
        return voc, V.build_sampling_table(voc, 0.75)

    def test_two_entity_vocabulary_exhausts_retries(self):
        voc, table = self._table([5, 5])
        edges = V.EdgeSet({(0, 1)}, 2)
        rng = np.random.default_rng(3)
        out = V.sample_negatives(table, edges, center=0, positive=1, k=4, rng=rng)
        # every candidate violates the rejection rule; bounded retry accepts anyway
        assert set(out.tolist()) <= {0, 1}
        assert table.escape_count == 4

    def test_star_graph_leaves_single_candidate(self):
        # center 0 connected to everyone except the last entity Z; Z gets
        # a large count so retries virtually never exhaust
        n = 8
        voc, table = self._table([1] * (n - 1) + [50])
        edges = V.EdgeSet({(0, i) for i in range(1, n - 1)}, n)
        rng = np.random.default_rng(9)
        out = V.sample_negatives(table, edges, center=0, positive=1, k=30, rng=rng)
        assert table.escape_count == 0
        assert (out == n - 1).all()

    def test_negatives_avoid_center_positive_and_edges(self, rng):
        voc, table = self._table(list(rng.integers(1, 50, size=30)))
        edge_pairs = {tuple(sorted(map(int, rng.integers(0, 30, 2)))) for _ in range(60)}
        edge_pairs = {(a, b) for a, b in edge_pairs if a != b}
        edges = V.EdgeSet(edge_pairs, 30)
        for _ in range(50):
            center, positive = map(int, rng.integers(0, 30, size=2))
            before = table.escape_count
            out = V.sample_negatives(table, edges, center, positive, 5, rng)
            if table.escape_count == before:  # no escape: all rules hold
                for x in out:
                    assert x != center and x != positive
                    assert (center, int(x)) not in edges

    def test_fixed_seed_is_deterministic(self):
        voc, table = self._table([3, 1, 4, 1, 5])
        edges = V.EdgeSet(set(), 5)
        a = V.sample_negatives(table, edges, 0, 1, 5, np.random.default_rng(42))
        b = V.sample_negatives(table, edges, 0, 1, 5, np.random.default_rng(42))
        assert (a == b).all()

    def test_k_validation(self):
        voc, table = self._table([1, 1])
        with pytest.raises(ValueError):
            V.sample_negatives(table, V.EdgeSet(set(), 2), 0, 1, 0, np.random.default_rng(0))
