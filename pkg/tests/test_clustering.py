import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from fslload.clustering import (
    ClusterConfig,
    Labeling,
    adjusted_rand_index,
    affinity_propagation,
    agglomerative,
    canonical_labels,
    cluster_features,
    cluster_population,
    cspa_consensus,
    gmm_em,
    kmeans,
    membership_matrix,
    pairwise_distances,
    partition_similarity_graph,
    query_members,
    silhouette,
    write_consensus,
)
from fslload.data import SynthConfig, synth_generate
from fslload.errors import InvalidArgument
from fslload.features import FeatureConfig
from fslload.series import Series

from oracles import partitions, same_partition

FOUR = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])


def blobs(seed, n=20, sep=10.0, d=2):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, d))
    b = rng.normal(size=(n, d)) + sep
    return np.vstack([a, b]), np.repeat([0, 1], n)


labelings_st = st.integers(2, 12).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, 4), min_size=n, max_size=n), min_size=1, max_size=6)
)


class TestBasics:
    def test_canonical(self):
        np.testing.assert_array_equal(canonical_labels([5, 5, 2, 9, 2]), [0, 0, 1, 2, 1])

    def test_distances(self):
        X = np.random.default_rng(0).normal(size=(7, 3))
        np.testing.assert_allclose(pairwise_distances(X), squareform(__import__("scipy").spatial.distance.pdist(X)),
                                   atol=1e-10)


class TestKmeans:
    def test_four_points_exhaustive(self):
        best, best_sse = None, np.inf
        for p in partitions(4):
            if max(p) != 1:
                continue
            lab = np.array(p)
            sse = sum(((FOUR[lab == j] - FOUR[lab == j].mean(0)) ** 2).sum() for j in range(2))
            if sse < best_sse:
                best, best_sse = lab, sse
        for seed in range(10):
            assert same_partition(kmeans(FOUR, 2, seed).labels, best)

    def test_k1(self):
        lab = kmeans(FOUR, 1)
        assert lab.k == 1
        np.testing.assert_allclose(lab.info["centroids"][0], FOUR.mean(0))

    def test_k_too_large(self):
        with pytest.raises(InvalidArgument):
            kmeans(FOUR, 5)

    def test_deterministic_and_duplicates(self):
        X, _ = blobs(1)
        a = kmeans(X, 3, seed=4)
        b = kmeans(X.copy(), 3, seed=4)
        np.testing.assert_array_equal(a.labels, b.labels)
        d = kmeans(np.vstack([X, X]), 2, seed=4)
        assert same_partition(d.labels[: len(X)], d.labels[len(X) :])

    @given(st.integers(0, 10_000), st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_sse_non_increasing(self, seed, k):
        X = np.random.default_rng(seed).normal(size=(30, 3))
        sse = kmeans(X, k, seed).info["sse"]
        assert all(b <= a + 1e-9 for a, b in zip(sse, sse[1:]))

    def test_all_clusters_nonempty(self):
        X = np.vstack([np.zeros((10, 2)), np.ones((2, 2))])
        lab = kmeans(X, 3, seed=0)
        assert lab.k == 3


class TestGmm:
    def test_blobs(self):
        for seed in range(5):
            X, truth = blobs(seed)
            assert same_partition(gmm_em(X, 2, seed).labels, truth)

    def test_k1(self):
        X, _ = blobs(0)
        lab = gmm_em(X, 1)
        assert lab.k == 1
        np.testing.assert_allclose(lab.info["model"].means[0], X.mean(0), atol=1e-8)
        assert lab.info["model"].weights.sum() == pytest.approx(1.0, abs=1e-8)

    @given(st.integers(0, 10_000), st.integers(1, 4))
    @settings(max_examples=30, deadline=None)
    def test_loglik_monotone(self, seed, k):
        X = np.random.default_rng(seed).normal(size=(40, 2))
        ll = gmm_em(X, k, seed).info["loglik"]
        assert all(b >= a - 1e-9 for a, b in zip(ll, ll[1:]))
        assert np.all(gmm_em(X, k, seed).info["model"].variances >= 1e-6)


class TestAgglomerative:
    def test_four_points(self):
        assert same_partition(agglomerative(FOUR, 2).labels, [0, 0, 1, 1])

    def test_extremes(self):
        assert agglomerative(FOUR, 4).k == 4
        assert agglomerative(FOUR, 1).k == 1

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            X = rng.normal(size=(25, 3))
            Z = linkage(X, "average")
            for k in (2, 3, 5):
                ref = fcluster(Z, k, "maxclust")
                assert same_partition(agglomerative(X, k).labels, ref)


class TestAffinity:
    def test_blobs(self):
        X, truth = blobs(3)
        lab = affinity_propagation(X)
        assert lab.converged
        assert lab.k == 2
        assert same_partition(lab.labels, truth)

    def test_repeated_point(self):
        assert affinity_propagation(np.ones((6, 2))).k == 1

    def test_deterministic(self):
        X, _ = blobs(2)
        np.testing.assert_array_equal(affinity_propagation(X).labels, affinity_propagation(X).labels)

    def test_against_sklearn(self):
        sk = pytest.importorskip("sklearn.cluster")
        X, _ = blobs(5, n=15)
        S = -pairwise_distances(X) ** 2
        pref = np.median(S[~np.eye(len(X), dtype=bool)])
        ref = sk.AffinityPropagation(damping=0.9, preference=pref, random_state=0, max_iter=500,
                                     convergence_iter=30).fit(X)
        assert adjusted_rand_index(affinity_propagation(X).labels, ref.labels_) == pytest.approx(1.0)


class TestConsensus:
    def test_worked_example(self):
        res = cspa_consensus([[0, 0, 1], [0, 1, 1]], 2)
        np.testing.assert_array_equal(res.co_association, [[2, 1, 0], [1, 2, 1], [0, 1, 2]])
        assert same_partition(res.labels, [0, 0, 1])

    def test_block_graph(self):
        S = np.array([[3, 3, 0], [3, 3, 0], [0, 0, 3]])
        assert same_partition(partition_similarity_graph(S, 2).labels, [0, 0, 1])
        assert partition_similarity_graph(S, 3).k == 3
        with pytest.raises(InvalidArgument):
            partition_similarity_graph(S, 4)

    def test_mismatched(self):
        with pytest.raises(InvalidArgument):
            cspa_consensus([[0, 1], [0, 1, 1]], 2)

    @given(labelings_st)
    @settings(max_examples=150, deadline=None)
    def test_invariants(self, labs):
        H, objs = membership_matrix(labs)
        S = H @ H.T
        r = len(labs)
        assert set(np.unique(H)) <= {0, 1}
        np.testing.assert_array_equal(H.sum(axis=1), r)
        np.testing.assert_array_equal(S, S.T)
        np.testing.assert_array_equal(np.diag(S), r)
        assert S.min() >= 0 and S.max() <= r
        # direct pair count
        L = np.array(labs)
        np.testing.assert_array_equal(S, (L[:, :, None] == L[:, None, :]).sum(axis=0))

    @given(labelings_st, st.integers(0, 1000))
    @settings(max_examples=80, deadline=None)
    def test_label_permutation_invariance(self, labs, seed):
        rng = np.random.default_rng(seed)
        k = min(2, len(labs[0]))
        permuted = [rng.permutation(5)[np.array(l)] for l in labs]
        a = cspa_consensus(labs, k)
        b = cspa_consensus(permuted, k)
        np.testing.assert_array_equal(a.co_association, b.co_association)
        np.testing.assert_array_equal(a.labels, b.labels)

    @given(st.lists(st.integers(0, 5), min_size=2, max_size=15), st.integers(1, 5))
    @settings(max_examples=80, deadline=None)
    def test_unanimity(self, lab, r):
        k = len(set(lab))
        res = cspa_consensus([lab] * r, k)
        assert same_partition(res.labels, lab)


class TestSilhouette:
    def test_example(self):
        X = np.array([[0.0], [0.1], [10.0], [10.1]])
        assert silhouette(X, [0, 0, 1, 1]) == pytest.approx(0.990, abs=1e-3)

    def test_interleaved(self):
        X = np.zeros((6, 1))
        assert silhouette(X, [0, 1, 0, 1, 0, 1]) <= 0

    def test_singletons(self):
        assert silhouette(FOUR, [0, 1, 2, 3]) == 0.0

    def test_single_cluster(self):
        with pytest.raises(InvalidArgument):
            silhouette(FOUR, [0, 0, 0, 0])

    def test_against_sklearn(self):
        skm = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(1)
        for _ in range(20):
            X = rng.normal(size=(30, 3))
            lab = rng.integers(0, 4, 30)
            if len(set(lab)) < 2:
                continue
            assert silhouette(X, lab) == pytest.approx(skm.silhouette_score(X, lab), abs=1e-10)

    def test_ari_against_sklearn(self):
        skm = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, b = rng.integers(0, 4, 25), rng.integers(0, 3, 25)
            assert adjusted_rand_index(a, b) == pytest.approx(skm.adjusted_rand_score(a, b), abs=1e-12)
        assert adjusted_rand_index([0, 0, 1], [5, 5, 2]) == 1.0


class TestPopulation:
    def test_blob_features(self):
        X, truth = blobs(0)
        res = cluster_features(X, ClusterConfig(), seed=0)
        assert res.final.k == 2 and res.s_score > 0.5
        assert same_partition(res.labels, truth)
        assert set(res.k_scores) == set(range(2, 9))

    @pytest.mark.parametrize("mode", ["kmeans", "gmm", "agglomerative", "affinity"])
    def test_single_modes(self, mode):
        X, truth = blobs(1)
        res = cluster_features(X, ClusterConfig(mode=mode), seed=0)
        assert same_partition(res.labels, truth)

    def test_bad_mode(self):
        with pytest.raises(InvalidArgument):
            cluster_features(FOUR, ClusterConfig(mode="dbscan"))

    def test_query_identical_to_history(self):
        ds = synth_generate(SynthConfig(num_users=6, periods=(10, 20), length=200, seed=1))
        hist = ds.series
        query = Series("q", hist[7].values[:96])
        res, qc = cluster_population(hist, query, ClusterConfig(features=FeatureConfig(stl_period=20)))
        assert res.labels[7] == qc

    def test_single_history(self):
        s = Series("a", np.sin(np.arange(64) / 3.0))
        res, qc = cluster_population([s], Series("q", s.values[:32] + 0.1))
        assert res.labels.tolist() == [0, 0] and qc == 0
        np.testing.assert_array_equal(query_members(res, qc), [0])

    def test_two_population_assignment(self):
        cfg = ClusterConfig(features=FeatureConfig(stl_period=20))
        correct = 0
        for seed in range(20):
            ds = synth_generate(SynthConfig(num_users=11, periods=(10, 20), length=192, seed=seed))
            hist = [s for i, s in enumerate(ds.series) if i != 10]
            query = ds.series[10]  # last period-10 user
            res, qc = cluster_population(hist, query, cfg, seed)
            members = query_members(res, qc)
            groups = [ds.labels[hist[i].user_id] for i in members]
            correct += np.bincount(groups, minlength=2).argmax() == 0
        assert correct >= 19

    def test_write(self, tmp_path):
        X, _ = blobs(0, n=5)
        res = cluster_features(X, ClusterConfig(), seed=0)
        write_consensus(tmp_path / "c.csv", tmp_path / "c.json", [f"u{i}" for i in range(10)], res)
        import json

        data = json.loads((tmp_path / "c.json").read_text())
        assert data["k_final"] == 2 and len(data["labelings"]) == 4
        assert (tmp_path / "c.csv").read_text().splitlines()[0] == "sample_id,final_label"


def test_labeling_from_list():
    lab = Labeling([3, 3, 1])
    assert lab.k == 2 and len(lab) == 3
