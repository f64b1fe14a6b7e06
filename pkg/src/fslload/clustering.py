"""Base clusterers, CSPA consensus over a co-association matrix, and scoring.

Every routine is deterministic given its seed; ties resolve toward the
smallest sample (or centroid) index.  Labels are always returned in
canonical form: clusters numbered by first appearance.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgument
from .features import FeatureConfig, extract_features, feature_matrix
from .series import Series, slice_index_window

log = logging.getLogger(__name__)

BASE_ALGORITHMS = ("kmeans", "gmm", "agglomerative", "affinity")


def canonical_labels(labels):
    labels = np.asarray(labels)
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first, kind="stable")
    mapping = {labels[first[i]]: rank for rank, i in enumerate(order)}
    return np.array([mapping[v] for v in labels], dtype=np.int64)


@dataclass
class Labeling:
    labels: np.ndarray
    algorithm: str = ""
    seed: int | None = None
    converged: bool = True
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.labels = canonical_labels(self.labels)

    @property
    def k(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def __len__(self):
        return self.labels.size


def _check_k(X, k):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    k = int(k)
    if k < 1 or k > X.shape[0]:
        raise InvalidArgument(f"k={k} must lie in [1, {X.shape[0]}]")
    return X, k


def pairwise_distances(X):
    X = np.asarray(X, dtype=np.float64)
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def _sq_dist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


# --------------------------------------------------------------------------
# k-means


def kmeans_plus_plus(X, k, rng):
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    d2 = _sq_dist(X, X[centers])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers.append(idx)
        d2 = np.minimum(d2, _sq_dist(X, X[[idx]])[:, 0])
    return X[centers].copy()


def kmeans(X, k, seed=0, max_iter=300, tol=1e-6) -> Labeling:
    """Lloyd's algorithm from a k-means++ start.

    ``info["sse"]`` records the within-cluster sum of squares after every
    assignment step; it never increases.
    """
    X, k = _check_k(X, k)
    rng = np.random.default_rng(seed)
    C = kmeans_plus_plus(X, k, rng)
    history = []
    for it in range(max_iter):
        d2 = _sq_dist(X, C)
        labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(X.shape[0]), labels].sum()))
        new = np.empty_like(C)
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
            else:
                # reseed to the point worst served by its current centroid
                own = d2[np.arange(X.shape[0]), labels]
                far = int(np.argmax(own))
                new[j] = X[far]
                labels[far] = j
                d2[far] = 0.0
        shift = float(np.max(np.sqrt(((new - C) ** 2).sum(axis=1))))
        C = new
        if shift < tol:
            break
    d2 = _sq_dist(X, C)
    labels = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(X.shape[0]), labels].sum()))
    # duplicate centroids (repeated points) can leave a cluster empty
    for j in range(k):
        if not np.any(labels == j):
            counts = np.bincount(labels, minlength=k)
            own = np.where(counts[labels] > 1, d2[np.arange(X.shape[0]), labels], -1.0)
            labels[int(np.argmax(own))] = j
    return Labeling(labels, "kmeans", seed, True, {"centroids": C, "sse": history, "iterations": it + 1})


# --------------------------------------------------------------------------
# diagonal Gaussian mixture


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def log_prob(self, X):
        """Per-component log joint density, shape (n, k)."""
        X = np.asarray(X, dtype=np.float64)
        diff = X[:, None, :] - self.means[None, :, :]
        quad = (diff * diff / self.variances[None, :, :]).sum(axis=2)
        logdet = np.log(self.variances).sum(axis=1)
        d = X.shape[1]
        return np.log(self.weights)[None, :] - 0.5 * (quad + logdet[None, :] + d * np.log(2 * np.pi))


def _logsumexp(a):
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def gmm_em(X, k, seed=0, max_iter=200, tol=1e-7, var_floor=1e-6) -> Labeling:
    """EM for a diagonal-covariance mixture, initialized from k-means.

    ``info["loglik"]`` holds the data log-likelihood before each M-step.
    """
    X, k = _check_k(X, k)
    n, d = X.shape
    init = kmeans(X, k, seed)
    resp = np.zeros((n, k))
    # kmeans labels are canonicalized; map back onto its centroid order
    raw = np.argmin(_sq_dist(X, init.info["centroids"]), axis=1)
    resp[np.arange(n), raw] = 1.0
    model = _m_step(X, resp, var_floor)
    history = []
    converged = False
    for _ in range(max_iter):
        lp = model.log_prob(X)
        norm = _logsumexp(lp)
        ll = float(norm.sum())
        if history and ll - history[-1] < tol:
            history.append(ll)
            converged = True
            break
        history.append(ll)
        resp = np.exp(lp - norm[:, None])
        model = _m_step(X, resp, var_floor)
    lp = model.log_prob(X)
    labels = np.argmax(lp, axis=1)
    return Labeling(labels, "gmm", seed, converged, {"model": model, "loglik": history})


def _m_step(X, resp, var_floor):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = (resp.T @ X) / nk[:, None]
    diff2 = (X[:, None, :] - means[None, :, :]) ** 2
    var = (resp[:, :, None] * diff2).sum(axis=0) / nk[:, None]
    return GaussianMixture(weights, means, np.maximum(var, var_floor))


# --------------------------------------------------------------------------
# hierarchical and affinity propagation


def agglomerative(X, k) -> Labeling:
    """Average-linkage agglomeration on Euclidean distances, cut at ``k``."""
    X, k = _check_k(X, k)
    return Labeling(kernels.average_linkage(pairwise_distances(X), k), "agglomerative")


def affinity_propagation(X, damping=0.9, max_iter=500, convergence_iter=30) -> Labeling:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n == 0:
        raise InvalidArgument("affinity propagation needs at least one sample")
    S = -pairwise_distances(X) ** 2
    off = S[~np.eye(n, dtype=bool)]
    if n == 1 or np.all(off == 0.0):
        return Labeling(np.zeros(n, dtype=np.int64), "affinity", info={"iterations": 0})
    pref = float(np.median(off))
    np.fill_diagonal(S, pref)
    R = np.zeros((n, n))
    A = np.zeros((n, n))
    rows = np.arange(n)
    last = None
    stable = 0
    converged = False
    for it in range(max_iter):
        AS = A + S
        top = np.argmax(AS, axis=1)
        first = AS[rows, top]
        AS[rows, top] = -np.inf
        second = AS.max(axis=1)
        R_new = S - first[:, None]
        R_new[rows, top] = S[rows, top] - second
        R = damping * R + (1 - damping) * R_new
        Rp = np.maximum(R, 0.0)
        Rp[rows, rows] = R[rows, rows]
        A_new = Rp.sum(axis=0)[None, :] - Rp
        diag = A_new[rows, rows].copy()
        A_new = np.minimum(A_new, 0.0)
        A_new[rows, rows] = diag
        A = damping * A + (1 - damping) * A_new
        ex = (np.diag(A) + np.diag(R)) > 0
        if last is not None and np.array_equal(ex, last):
            stable += 1
        else:
            stable = 0
        last = ex
        if stable >= convergence_iter and ex.any():
            converged = True
            break
    exemplars = np.flatnonzero(last)
    if exemplars.size == 0:
        log.warning("affinity propagation found no exemplars; returning one cluster")
        return Labeling(np.zeros(n, dtype=np.int64), "affinity", converged=False, info={"iterations": it + 1})
    labels = _assign_to_exemplars(S, exemplars)
    # refine: each cluster's exemplar is the member with the largest summed similarity
    refined = []
    for j in range(exemplars.size):
        members = np.flatnonzero(labels == j)
        refined.append(members[np.argmax(S[np.ix_(members, members)].sum(axis=0))])
    exemplars = np.array(refined)
    labels = _assign_to_exemplars(S, exemplars)
    if not converged:
        log.warning("affinity propagation did not converge in %d iterations", max_iter)
    return Labeling(labels, "affinity", converged=converged,
                    info={"exemplars": exemplars, "iterations": it + 1})


def _assign_to_exemplars(S, exemplars):
    labels = np.argmax(S[:, exemplars], axis=1)
    labels[exemplars] = np.arange(exemplars.size)
    return labels


# --------------------------------------------------------------------------
# consensus


@dataclass
class ConsensusResult:
    labelings: list
    membership: np.ndarray  # H, samples x total base clusters
    co_association: np.ndarray  # S = H H^T
    final: Labeling
    s_score: float | None = None
    features: np.ndarray | None = field(default=None, repr=False)
    k_scores: dict = field(default_factory=dict)

    @property
    def labels(self):
        return self.final.labels


def membership_matrix(labelings):
    labelings = [l if isinstance(l, Labeling) else Labeling(l) for l in labelings]
    if not labelings:
        raise InvalidArgument("need at least one labeling")
    n = len(labelings[0])
    if any(len(l) != n for l in labelings):
        raise InvalidArgument("labelings cover different numbers of samples")
    blocks = [np.eye(l.k, dtype=np.int64)[l.labels] for l in labelings]
    return np.hstack(blocks), labelings


def partition_similarity_graph(S, k, r=None) -> Labeling:
    """Cut the co-association graph into ``k`` groups.

    Average linkage on ``1 - S / r`` where ``r`` is the number of base
    labelings (the diagonal of ``S``).
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    k = int(k)
    if k < 1 or k > n:
        raise InvalidArgument(f"k={k} must lie in [1, {n}]")
    if r is None:
        r = float(S.diagonal().max())
    return Labeling(kernels.average_linkage(1.0 - S / r, k), "cspa")


def cspa_consensus(labelings, k_final, X=None) -> ConsensusResult:
    H, labelings = membership_matrix(labelings)
    S = H @ H.T
    final = partition_similarity_graph(S, k_final, r=len(labelings))
    score = None
    if X is not None and 2 <= final.k < len(final):
        score = silhouette(X, final.labels)
    return ConsensusResult(labelings, H, S, final, score, None if X is None else np.asarray(X))


# --------------------------------------------------------------------------
# scores


def silhouette(X, labels) -> float:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = canonical_labels(labels)
    k = int(labels.max()) + 1
    if k < 2:
        raise InvalidArgument("silhouette needs at least two clusters")
    D = pairwise_distances(X)
    n = X.shape[0]
    onehot = np.eye(k)[labels]
    sizes = onehot.sum(axis=0)
    sums = D @ onehot  # (n, k): summed distance to each cluster
    own = labels
    s = np.zeros(n)
    for i in range(n):
        size = sizes[own[i]]
        if size <= 1:
            continue
        a = sums[i, own[i]] / (size - 1)
        other = np.delete(sums[i] / sizes, own[i])
        b = other.min()
        m = max(a, b)
        s[i] = (b - a) / m if m > 0 else 0.0
    return float(s.mean())


def adjusted_rand_index(a, b) -> float:
    a = canonical_labels(a)
    b = canonical_labels(b)
    if a.size != b.size:
        raise InvalidArgument("label vectors differ in length")
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)

    def comb2(v):
        v = np.asarray(v, dtype=np.float64)
        return float((v * (v - 1) / 2).sum())

    index = comb2(table)
    ra = comb2(table.sum(axis=1))
    rb = comb2(table.sum(axis=0))
    total = a.size * (a.size - 1) / 2
    expected = ra * rb / total if total else 0.0
    max_index = 0.5 * (ra + rb)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


# --------------------------------------------------------------------------
# population clustering


@dataclass(frozen=True)
class ClusterConfig:
    features: FeatureConfig = FeatureConfig()
    k_candidates: tuple = (2, 3, 4, 5, 6, 7, 8)
    algorithms: tuple = BASE_ALGORITHMS
    restarts: int = 1
    mode: str = "ensemble"  # or one of BASE_ALGORITHMS


def _base_labelings(X, k, config, seed, ap):
    out = []
    for r in range(config.restarts):
        s = seed + r
        if "kmeans" in config.algorithms:
            out.append(kmeans(X, k, s))
        if "gmm" in config.algorithms:
            out.append(gmm_em(X, k, s))
    if "agglomerative" in config.algorithms:
        # deterministic: one run regardless of restarts
        out.append(agglomerative(X, k))
    if ap is not None:
        out.append(ap)
    return out


def cluster_features(X, config: ClusterConfig = ClusterConfig(), seed=0) -> ConsensusResult:
    """Consensus (or single-algorithm) clustering with silhouette-selected k."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    mode = config.mode
    if mode != "ensemble" and mode not in BASE_ALGORITHMS:
        raise InvalidArgument(f"unknown clustering mode {mode!r}")
    candidates = [k for k in config.k_candidates if 2 <= k <= n - 1]
    want_ap = (mode == "ensemble" and "affinity" in config.algorithms) or mode == "affinity"
    ap = affinity_propagation(X) if want_ap and n >= 2 else None

    if mode == "affinity" or not candidates:
        lab = ap if (mode == "affinity" and ap is not None) else Labeling(np.zeros(n, dtype=np.int64), mode)
        res = cspa_consensus([lab], lab.k, X)
        res.final = lab
        res.s_score = silhouette(X, lab.labels) if 2 <= lab.k < n else 0.0
        return res

    best = None
    scores = {}
    for k in candidates:
        if mode == "ensemble":
            res = cspa_consensus(_base_labelings(X, k, config, seed, ap), k, X)
        else:
            lab = {"kmeans": lambda: kmeans(X, k, seed), "gmm": lambda: gmm_em(X, k, seed),
                   "agglomerative": lambda: agglomerative(X, k)}[mode]()
            res = cspa_consensus([lab], k, X)
            res.final = lab
            res.s_score = silhouette(X, lab.labels) if 2 <= lab.k < n else 0.0
        score = res.s_score if res.s_score is not None else -np.inf
        scores[k] = score
        if best is None or score > best.s_score:
            best = res
    best.k_scores = scores
    return best


def cluster_population(historical, query: Series, config: ClusterConfig = ClusterConfig(), seed=0):
    """Cluster historical users on the query's index window, query included.

    Returns ``(consensus, query_cluster)``; the query is the last row of the
    consensus labels.
    """
    windows = [slice_index_window(h, query.start_index, len(query)) for h in historical]
    vectors = [extract_features(w, config.features) for w in windows]
    vectors.append(extract_features(query, config.features))
    X, _ = feature_matrix(vectors, config.features)
    res = cluster_features(X, config, seed)
    return res, int(res.labels[-1])


def query_members(consensus: ConsensusResult, query_cluster: int):
    """Historical sample indices that share the query's cluster.

    When the query sits alone, falls back to the cluster of its nearest
    historical neighbour in feature space.
    """
    labels = consensus.labels
    hist = labels[:-1]
    members = np.flatnonzero(hist == query_cluster)
    if members.size or hist.size == 0:
        return members
    X = consensus.features
    d = np.sqrt(((X[:-1] - X[-1]) ** 2).sum(axis=1))
    nearest = int(np.argmin(d))
    return np.flatnonzero(hist == hist[nearest])


def write_consensus(csv_path, json_path, ids, result: ConsensusResult):
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "final_label"])
        for uid, lab in zip(ids, result.labels):
            w.writerow([uid, int(lab)])
    payload = {
        "s_score": None if result.s_score is None else float(result.s_score),
        "k_final": int(result.final.k),
        "k_scores": {str(k): float(v) for k, v in result.k_scores.items()},
        "labelings": [
            {"algorithm": l.algorithm, "seed": l.seed, "k": int(l.k), "converged": bool(l.converged),
             "labels": [int(v) for v in l.labels]}
            for l in result.labelings
        ],
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
