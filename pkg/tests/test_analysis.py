import io

import numpy as np
import pytest

from txn2vec import analysis
from txn2vec.analysis import (
    analogy,
    best_direction_subspace,
    direction_consistency,
    export_projection,
    nearest_neighbors,
    pca,
)
from txn2vec.errors import DataError
from txn2vec.sgns import Embeddings


def emb_from(matrix, keys=None):
    matrix = np.asarray(matrix, dtype=np.float32)
    keys = keys or [f"E{i:03d}" for i in range(matrix.shape[0])]
    return Embeddings(keys, matrix)


class TestNearestNeighbors:
    def test_planted_duplicate_ranks_first_with_unit_similarity(self, rng):
        vecs = rng.normal(size=(20, 6))
        vecs[7] = vecs[3]  # duplicate of the query direction
        emb = emb_from(vecs)
        result = nearest_neighbors(emb, "E003", top_n=3)
        key, sim = result.neighbors[0]
        assert key == "E007"
        assert sim == pytest.approx(1.0, abs=1e-9)

    def test_matches_exhaustive_scan_oracle(self, rng):
        vecs = rng.normal(size=(100, 8))
        emb = emb_from(vecs)
        query = "E042"
        result = nearest_neighbors(emb, query, top_n=10)
        qi = emb.key_to_id[query]
        q = vecs[qi] / np.linalg.norm(vecs[qi])
        sims = []
        for i in range(100):
            if i == qi:
                continue
            v = vecs[i] / np.linalg.norm(vecs[i])
            sims.append((emb.keys[i], float(q @ v)))
        sims.sort(key=lambda kv: (-kv[1], kv[0]))
        want = [k for k, _ in sims[:10]]
        assert [k for k, _ in result.neighbors] == want
        for (_, got_sim), (_, want_sim) in zip(result.neighbors, sims):
            assert got_sim == pytest.approx(want_sim, abs=1e-6)

    def test_invariant_under_global_positive_scaling(self, rng):
        vecs = rng.normal(size=(30, 5))
        a = nearest_neighbors(emb_from(vecs), "E005", top_n=7)
        b = nearest_neighbors(emb_from(vecs * 37.0), "E005", top_n=7)
        assert [k for k, _ in a.neighbors] == [k for k, _ in b.neighbors]

    def test_ties_break_by_key_ascending(self):
        vecs = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
        emb = emb_from(vecs, keys=["Q", "ZED", "ALPHA", "MID"])
        result = nearest_neighbors(emb, "Q", top_n=3)
        assert [k for k, _ in result.neighbors] == ["ALPHA", "MID", "ZED"]

    def test_unknown_key_error_lists_close_matches(self, rng):
        emb = emb_from(rng.normal(size=(5, 3)), keys=["ALPHA", "BETA", "GAMMA", "DELTA", "OMEGA"])
        with pytest.raises(DataError, match="ALPHA"):
            nearest_neighbors(emb, "ALPH", top_n=2)

    def test_category_purity_after_training(self, balanced_market):
        # the full-size market reaches majority purity (acceptance run);
        # the fast fixture must at least sit far above the 1/6 chance level
        emb, truth = balanced_market
        hits = total = 0
        for key in emb.keys[:40]:
            cat = truth.get(key).category
            for nkey, _ in nearest_neighbors(emb, key, top_n=5).neighbors:
                hits += truth.get(nkey).category == cat
                total += 1
        assert hits / total > 1.5 / 6


class TestPca:
    def test_line_y_equals_x(self):
        pts = np.array([[t, t] for t in np.linspace(-2, 2, 9)])
        result = pca(pts, 1)
        comp = result.components[0]
        np.testing.assert_allclose(np.abs(comp), [2**-0.5, 2**-0.5], atol=1e-12)
        assert comp[np.abs(comp).argmax()] > 0  # sign convention
        assert result.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-9)

    def test_components_orthonormal(self, rng):
        result = pca(rng.normal(size=(40, 10)), 6)
        gram = result.components @ result.components.T
        np.testing.assert_allclose(gram, np.eye(6), atol=1e-9)

    def test_variances_match_covariance_eigensolver_oracle(self, rng):
        x = rng.normal(size=(50, 8))
        result = pca(x, 8)
        cov = np.cov(x, rowvar=False)
        eigvals = np.sort(np.linalg.eigvalsh(cov))[::-1]
        np.testing.assert_allclose(result.explained_variance, eigvals, atol=1e-8)

    def test_explained_total_at_most_total_variance(self, rng):
        x = rng.normal(size=(30, 12))
        result = pca(x, 5)
        xc = x - x.mean(axis=0)
        total = (xc**2).sum() / (len(x) - 1)
        assert result.explained_variance.sum() <= total + 1e-8
        assert result.explained_variance_ratio.sum() <= 1.0 + 1e-12

    def test_rank_deficient_surplus_components_carry_no_variance(self, rng):
        base = rng.normal(size=(20, 2))
        x = np.hstack([base, base @ rng.normal(size=(2, 3))])  # rank 2 in 5-D
        result = pca(x, 5)
        assert result.explained_variance[2:].max() < 1e-20

    def test_projections_reconstruct_centered_data(self, rng):
        x = rng.normal(size=(25, 6))
        result = pca(x, 6)
        xc = x - result.mean
        np.testing.assert_allclose(result.projections @ result.components, xc, atol=1e-9)

    def test_sign_convention_deterministic(self, rng):
        x = rng.normal(size=(30, 7))
        a = pca(x, 4)
        b = pca(x.copy(), 4)
        np.testing.assert_array_equal(a.components, b.components)
        for row in a.components:
            assert row[np.abs(row).argmax()] > 0


class TestDirectionConsistency:
    def test_identical_deltas_give_one(self):
        vecs = np.zeros((4, 3), dtype=np.float32)
        vecs[0] = [1, 1, 0]
        vecs[1] = [0, 1, 0]  # delta (1,0,0)
        vecs[2] = [3, 0, 1]
        vecs[3] = [2, 0, 1]  # delta (1,0,0)
        emb = emb_from(vecs)
        mean, deltas = direction_consistency(emb, [("E000", "E001"), ("E002", "E003")])
        assert mean == pytest.approx(1.0)
        assert len(deltas) == 2

    def test_opposite_deltas_give_minus_one(self):
        vecs = np.zeros((4, 2), dtype=np.float32)
        vecs[0] = [1, 0]
        vecs[1] = [0, 0]
        vecs[2] = [0, 0]
        vecs[3] = [1, 0]
        emb = emb_from(vecs)
        mean, _ = direction_consistency(emb, [("E000", "E001"), ("E002", "E003")])
        assert mean == pytest.approx(-1.0)

    def test_invariant_under_common_translation(self, rng):
        vecs = rng.normal(size=(8, 5)).astype(np.float32)
        emb1 = emb_from(vecs)
        emb2 = emb_from(vecs + rng.normal(size=5).astype(np.float32))
        pairs = [("E000", "E001"), ("E002", "E003"), ("E004", "E005")]
        m1, _ = direction_consistency(emb1, pairs)
        m2, _ = direction_consistency(emb2, pairs)
        assert m1 == pytest.approx(m2, abs=1e-5)

    def test_zero_delta_pairs_excluded_with_warning(self, caplog):
        vecs = np.array([[1, 0], [1, 0], [2, 1], [1, 1], [3, 1], [2, 1]], dtype=np.float32)
        emb = emb_from(vecs)
        with caplog.at_level("WARNING"):
            mean, deltas = direction_consistency(
                emb, [("E000", "E001"), ("E002", "E003"), ("E004", "E005")]
            )
        assert len(deltas) == 2
        assert "zero difference" in caplog.text

    def test_needs_two_pairs(self):
        emb = emb_from(np.eye(3, dtype=np.float32))
        with pytest.raises(ValueError):
            direction_consistency(emb, [("E000", "E001")])

    def test_subspace_projection_changes_the_measurement(self, rng):
        # deltas agree on component 0, disagree on high components
        n = 12
        base = np.zeros((n, 4))
        for i in range(0, n, 2):
            base[i, 0] = 2.0
            base[i, 1 + (i // 2) % 3] = 4.0 * (1 if (i // 2) % 2 else -1)
        vecs = (base + rng.normal(0, 0.01, size=(n, 4))).astype(np.float32)
        emb = emb_from(vecs)
        pairs = [(f"E{i:03d}", f"E{i+1:03d}") for i in range(0, n, 2)]
        full, _ = direction_consistency(emb, pairs)
        sub, _ = direction_consistency(emb, pairs, subspace=[3])
        assert sub != pytest.approx(full)

    def test_best_subspace_scan_finds_planted_axis(self, small_trained):
        _, _, emb, truth = small_trained
        from txn2vec.synthgen import tier_contrast_pairs

        pairs = tier_contrast_pairs(truth, emb.keys, max_pairs=30)
        (i, j), score = best_direction_subspace(emb, pairs, 6)
        assert 0 <= i < j < 6
        full, _ = direction_consistency(emb, pairs)
        assert score >= full - 1e-9


class TestAnalogy:
    def test_offset_cancels_to_nearest_neighbors(self, rng):
        vecs = rng.normal(size=(30, 6)).astype(np.float32)
        vecs[4] = vecs[9]  # a == b as vectors
        emb = emb_from(vecs)
        got = analogy(emb, "E004", "E009", "E017", top_n=5)
        nn = nearest_neighbors(emb, "E017", top_n=8).neighbors
        nn = [(k, s) for k, s in nn if k not in ("E004", "E009")][:5]
        assert [k for k, _ in got] == [k for k, _ in nn]

    def test_exact_parallelogram_fourth_corner_ranks_first(self, rng):
        vecs = rng.normal(size=(20, 5)).astype(np.float32)
        # plant d = a - b + c exactly
        vecs[13] = vecs[2] - vecs[7] + vecs[11]
        emb = emb_from(vecs)
        got = analogy(emb, "E002", "E007", "E011", top_n=1)
        assert got[0][0] == "E013"
        assert got[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_query_keys_excluded(self, rng):
        emb = emb_from(rng.normal(size=(10, 4)))
        got = analogy(emb, "E001", "E002", "E003", top_n=9)
        keys = [k for k, _ in got]
        assert not ({"E001", "E002", "E003"} & set(keys))

    def test_tier_analogy_on_trained_market(self, balanced_market):
        # high-tier : low-tier :: blank : low-tier', sweeping categories;
        # a hit is any top-3 entry at the target tier in the target category
        emb, truth = balanced_market
        from txn2vec.synthgen import tier_contrast_pairs

        pairs = tier_contrast_pairs(truth, emb.keys, max_pairs=20)
        hits = trials = 0
        for (hi_a, lo_a), (hi_b, lo_b) in zip(pairs, pairs[1:]):
            got = [k for k, _ in analogy(emb, hi_a, lo_a, lo_b, top_n=3)]
            hits += any(
                truth.get(k).tier == truth.get(hi_b).tier
                and truth.get(k).category == truth.get(hi_b).category
                for k in got
            )
            trials += 1
        assert hits / trials > 0.5


class TestExportProjection:
    def test_rows_and_round_trip(self, rng):
        vecs = rng.normal(size=(3, 4)).astype(np.float32)
        emb = emb_from(vecs)
        result = pca(vecs, 2)
        buf = io.StringIO()
        export_projection(emb, result, 0, 1, buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == 3
        for i, line in enumerate(lines):
            key, x, y = line.split("\t")
            assert key == emb.keys[i]
            assert float(x) == pytest.approx(result.projections[i, 0], abs=1e-6)
            assert float(y) == pytest.approx(result.projections[i, 1], abs=1e-6)

    def test_component_index_validated(self, rng):
        vecs = rng.normal(size=(5, 3)).astype(np.float32)
        emb = emb_from(vecs)
        result = pca(vecs, 2)
        with pytest.raises(ValueError):
            export_projection(emb, result, 0, 2, io.StringIO())
