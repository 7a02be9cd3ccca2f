"""Divide-and-conquer clustering for fingerprint sets too large for one solve.

Stages: random split into batches, per-batch partition (LASSO, random-walk
outlier rejection, KNN sparsification, DBSCAN), recycling of the outlier
pools, merging of sub-clusters under an adaptive correlation threshold, and
a final attraction of leftovers to the nearest centroid.

Fingerprints are addressed by their integer column in a
:class:`~spnclust.io.FingerprintSource`; at most one batch is loaded at a
time during partitioning.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .admm import constrained_lasso
from .config import LsConfig
from .errors import SingularFit
from .io import FingerprintSource, as_source
from .spectral import ClusteringResult, canonical_labels

log = logging.getLogger(__name__)

CENTROID_EPS = 1e-300


def null_floor(d: int, p_fa: float) -> float:
    """Correlation above which independent fingerprints are rejected: Q^-1(p_fa)/sqrt(d)."""
    if d < 1:
        raise ValueError("d must be positive")
    return float(norm.isf(p_fa)) / math.sqrt(d)


@dataclass
class SubCluster:
    """A group of fingerprint columns plus statistics on a bounded subset.

    ``bounded`` holds at most ``card_cap`` member columns; ``gram`` is their
    correlation matrix and ``centroid`` their mean.
    """

    members: list
    bounded: list
    gram: np.ndarray
    centroid: np.ndarray

    @classmethod
    def from_columns(cls, members: Sequence[int], X_bounded: np.ndarray, card_cap: int) -> "SubCluster":
        members = list(members)
        bounded = members[:card_cap]
        Xb = np.asarray(X_bounded, dtype=np.float64)
        if Xb.shape[1] != len(bounded):
            raise ValueError("need one column per bounded member")
        return cls(members, bounded, Xb.T @ Xb, Xb.mean(axis=1))

    @property
    def cardinality(self) -> int:
        return len(self.members)

    @property
    def rho(self) -> float:
        """Mean pairwise correlation of the bounded members (0 for singletons)."""
        m = len(self.bounded)
        if m < 2:
            return 0.0
        off = float(self.gram.sum() - np.trace(self.gram))
        return float(np.clip(off / (m * (m - 1)), -1.0, 1.0))


@dataclass(frozen=True)
class MergeRegressor:
    """Linear threshold model over (n_A, n_B, rho_A, rho_B)."""

    weights: tuple = (0.0016, 0.0016, 2.2474, 2.2474)
    bias: float = -0.0474

    def __post_init__(self):
        if len(self.weights) != 4:
            raise ValueError("four weights required")
        w = self.weights
        if w[0] != w[1] or w[2] != w[3]:
            raise ValueError("weights must be symmetric in the two cluster roles")

    def __call__(self, n_a, n_b, rho_a, rho_b):
        w = self.weights
        # pairwise grouping keeps the result exactly role-symmetric
        return (w[0] * n_a + w[1] * n_b) + (w[2] * rho_a + w[3] * rho_b) + self.bias


def fit_merge_regressor(samples) -> MergeRegressor:
    """Least-squares fit on ``(n_A, n_B, rho_A, rho_B, target)`` rows.

    Each row is duplicated with the roles of A and B exchanged.
    """
    S = np.asarray(samples, dtype=np.float64)
    if S.ndim != 2 or S.shape[1] != 5:
        raise ValueError("samples must be rows of (n_A, n_B, rho_A, rho_B, target)")
    if S.shape[0] < 5:
        raise ValueError("at least five samples are required")
    swapped = S[:, [1, 0, 3, 2, 4]]
    data = np.vstack([S, swapped])
    A = np.column_stack([data[:, :4], np.ones(len(data))])
    if np.linalg.matrix_rank(A) < 5:
        raise SingularFit("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(A, data[:, 4], rcond=None)
    wn = 0.5 * (coef[0] + coef[1])
    wr = 0.5 * (coef[2] + coef[3])
    return MergeRegressor((float(wn), float(wn), float(wr), float(wr)), float(coef[4]))


def merge_threshold(a: SubCluster, b: SubCluster, reg: MergeRegressor, d: int,
                    p_fa: float = 0.001, card_cap: int = 50) -> float:
    """Adaptive merge threshold, never below the null-hypothesis floor."""
    n_a = min(a.cardinality, card_cap)
    n_b = min(b.cardinality, card_cap)
    return max(null_floor(d, p_fa), float(reg(n_a, n_b, a.rho, b.rho)))


def split_batches(n_or_ids, p: int, seed=0) -> list:
    """Random split of ``range(n)`` into ceil(n/p) batches of at most ``p`` items.

    Accepts either a count or a sequence of ids; returns lists of positions.
    """
    n = n_or_ids if isinstance(n_or_ids, (int, np.integer)) else len(n_or_ids)
    if p < 2:
        raise ValueError("batch size must be >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [perm[i:i + p].tolist() for i in range(0, n, p)]


def random_walk_outliers(Z, inlier_fraction: float = 0.8, walk_steps: int = 1000):
    """Split items into inliers and outliers by random-walk state probability.

    The walk runs on the row-normalized symmetrized ``|Z|`` starting from the
    uniform distribution.  A normal law is fitted to the final probabilities
    and items below its ``1 - inlier_fraction`` quantile are outliers.
    Returns two sorted index arrays ``(inliers, outliers)``.
    """
    Z = np.abs(np.asarray(Z, dtype=np.float64))
    n = Z.shape[0]
    W = 0.5 * (Z + Z.T)
    idx = np.arange(n)
    if not np.any(W):
        return idx[:0], idx
    deg = W.sum(axis=1)
    P = np.empty_like(W)
    live = deg > 0
    P[live] = W[live] / deg[live, None]
    P[~live] = 1.0 / n
    PT = P.T.copy()
    pi = np.full(n, 1.0 / n)
    for _ in range(walk_steps):
        pi = PT @ pi
    mu, sigma = pi.mean(), pi.std()
    if inlier_fraction >= 1.0 or sigma < 1e-12:
        return idx, idx[:0]
    cut = mu + sigma * norm.ppf(1.0 - inlier_fraction)
    keep = pi >= cut
    return idx[keep], idx[~keep]


def knn_sparsify(Z, K: int) -> np.ndarray:
    """Keep the ``K`` largest entries of every column (ties: lower row first)."""
    Z = np.asarray(Z, dtype=np.float64)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K >= Z.shape[0]:
        return Z.copy()
    order = np.argsort(-Z, axis=0, kind="stable")[:K]
    out = np.zeros_like(Z)
    cols = np.arange(Z.shape[1])
    out[order, cols] = Z[order, cols]
    return out


def dbscan_subclusters(S, K: int):
    """DBSCAN on a similarity graph.

    Radius is the mean non-zero entry of ``S``; ``i`` and ``j`` are neighbours
    when ``max(S_ij, S_ji)`` reaches it; ``MinPts = K`` neighbours make a
    core point.  Returns ``(clusters, noise)`` as lists of local indices;
    border points go to the first cluster that reaches them.
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    nz = S[S > 0]
    if nz.size == 0:
        return [], list(range(n))
    eps = nz.mean()
    A = np.maximum(S, S.T) >= eps
    np.fill_diagonal(A, False)
    neighbours = [np.flatnonzero(A[i]) for i in range(n)]
    core = np.array([len(nb) >= K for nb in neighbours])

    label = np.full(n, -1)
    clusters = []
    for seed in range(n):
        if not core[seed] or label[seed] >= 0:
            continue
        cid = len(clusters)
        members = [seed]
        label[seed] = cid
        frontier = [seed]
        while frontier:
            nxt = []
            for i in frontier:
                for j in neighbours[i]:
                    if label[j] >= 0:
                        continue
                    label[j] = cid
                    members.append(int(j))
                    if core[j]:
                        nxt.append(j)
            frontier = nxt
        clusters.append(sorted(members))
    noise = [i for i in range(n) if label[i] < 0]
    return clusters, noise


def partition_batch(batch: Sequence[int], source: FingerprintSource, cfg: LsConfig):
    """Extract pure sub-clusters from one batch.

    Returns ``(subclusters, outliers)``; outliers combine random-walk
    rejects and DBSCAN noise, as global column indices.
    """
    batch = list(batch)
    if len(batch) < 2:
        return [], batch
    with source.loaded(batch) as Xb:
        Xb = np.asarray(Xb, dtype=np.float64)
        gram = Xb.T @ Xb
        rep = constrained_lasso(None, cfg.admm, gram=gram)
        inl, outl = random_walk_outliers(rep.Z, cfg.inlier_fraction, cfg.walk_steps)
        outliers = [batch[i] for i in outl]
        if inl.size == 0:
            return [], sorted(outliers)
        S = knn_sparsify(rep.Z[np.ix_(inl, inl)], cfg.knn)
        groups, noise = dbscan_subclusters(S, cfg.knn)
        outliers.extend(batch[inl[i]] for i in noise)
        subs = []
        for g in groups:
            local = [int(inl[i]) for i in g]
            bounded = local[: cfg.card_cap]
            subs.append(SubCluster(
                members=[batch[i] for i in local],
                bounded=[batch[i] for i in bounded],
                gram=gram[np.ix_(bounded, bounded)].copy(),
                centroid=Xb[:, bounded].mean(axis=1),
            ))
    return subs, sorted(outliers)


def proportional_sizes(pool_sizes: Sequence[int], p: int) -> list:
    """Per-pool draw sizes proportional to pool size, summing to min(p, total).

    Fractional quotas are rounded by largest remainder (ties: lower pool).
    """
    sizes = np.asarray(pool_sizes, dtype=np.int64)
    total = int(sizes.sum())
    if total == 0:
        return [0] * len(sizes)
    target = min(p, total)
    quota = sizes * target / total
    base = np.floor(quota).astype(np.int64)
    short = target - int(base.sum())
    order = np.argsort(-(quota - base), kind="stable")
    for i in order:
        if short == 0:
            break
        if base[i] < sizes[i]:
            base[i] += 1
            short -= 1
    return base.tolist()


def recycle(pools: list, source: FingerprintSource, cfg: LsConfig, rounds: int, rng):
    """Re-partition batches drawn proportionally from the outlier pools.

    Each round pops a random sample from every non-empty pool, partitions
    it and appends the new outliers as an extra pool.  Returns
    ``(subclusters, pools)``.
    """
    pools = [list(p) for p in pools]
    found = []
    for r in range(rounds):
        sizes = proportional_sizes([len(p) for p in pools], cfg.batch_size)
        if sum(sizes) == 0:
            break
        batch = []
        for pool, s in zip(pools, sizes):
            if s == 0:
                continue
            pick = set(rng.choice(len(pool), size=s, replace=False).tolist())
            batch.extend(pool[i] for i in sorted(pick))
            pool[:] = [x for i, x in enumerate(pool) if i not in pick]
        subs, out = partition_batch(batch, source, cfg)
        log.info("recycle round=%d batch=%d subclusters=%d outliers=%d", r, len(batch), len(subs), len(out))
        found.extend(subs)
        pools.append(out)
    return found, pools


def _combine(big: SubCluster, small: SubCluster, source: FingerprintSource, card_cap: int) -> SubCluster:
    take = small.bounded[: max(0, card_cap - len(big.bounded))]
    members = big.members + small.members
    if not take:
        return SubCluster(members, list(big.bounded), big.gram, big.centroid)
    m, t = len(big.bounded), len(take)
    with source.loaded(big.bounded + take) as Xs:
        Xs = np.asarray(Xs, dtype=np.float64)
        cross = Xs[:, :m].T @ Xs[:, m:]
        take_sum = Xs[:, m:].sum(axis=1)
    gram = np.block([[big.gram, cross], [cross.T, small.gram[:t, :t]]])
    centroid = (big.centroid * m + take_sum) / (m + t)
    return SubCluster(members, big.bounded + take, gram, centroid)


def _centroid_corr(C: np.ndarray) -> np.ndarray:
    Cc = C - C.mean(axis=0)
    nrm = np.linalg.norm(Cc, axis=0)
    nrm[nrm < CENTROID_EPS] = np.inf
    Cc = Cc / nrm
    return Cc.T @ Cc


def merge_phase(subclusters: list, source: FingerprintSource, reg: MergeRegressor,
                d: int, p_fa: float = 0.001, card_cap: int = 50) -> list:
    """Greedily merge the most correlated qualifying pair until none qualifies.

    A pair qualifies when the normalized correlation of its centroids
    exceeds :func:`merge_threshold`.
    """
    subs = list(subclusters)
    if len(subs) < 2:
        return subs
    m = len(subs)
    active = np.ones(m, dtype=bool)
    floor = null_floor(d, p_fa)
    C = np.column_stack([s.centroid for s in subs])
    corr = _centroid_corr(C)
    card = np.array([min(s.cardinality, card_cap) for s in subs], dtype=np.float64)
    rho = np.array([s.rho for s in subs])

    def thresholds():
        R = (reg.weights[0] * card[:, None] + reg.weights[1] * card[None, :]) + \
            (reg.weights[2] * rho[:, None] + reg.weights[3] * rho[None, :]) + reg.bias
        return np.maximum(R, floor)

    tau = thresholds()
    while True:
        ok = (corr > tau) & active[:, None] & active[None, :]
        np.fill_diagonal(ok, False)
        if not ok.any():
            break
        score = np.where(ok, corr, -np.inf)
        i, j = np.unravel_index(int(np.argmax(score)), score.shape)
        i, j = (i, j) if i < j else (j, i)
        a, b = subs[i], subs[j]
        big, small = (a, b) if a.cardinality >= b.cardinality else (b, a)
        merged = _combine(big, small, source, card_cap)
        subs[i] = merged
        subs[j] = None
        active[j] = False
        C[:, i] = merged.centroid
        card[i] = min(merged.cardinality, card_cap)
        rho[i] = merged.rho
        row = _centroid_corr(C)[i]
        corr[i, :] = row
        corr[:, i] = row
        tau = thresholds()
    return [s for s in subs if s is not None]


def _stream_corr(cols: Sequence[int], source: FingerprintSource, centroids: np.ndarray, chunk: int):
    """Normalized correlation of each listed column against each centroid."""
    Cc = centroids - centroids.mean(axis=0)
    nrm = np.linalg.norm(Cc, axis=0)
    nrm[nrm < CENTROID_EPS] = np.inf
    Cc = Cc / nrm
    out = np.empty((len(cols), centroids.shape[1]))
    for s in range(0, len(cols), chunk):
        part = list(cols[s:s + chunk])
        with source.loaded(part) as Xo:
            Xo = np.asarray(Xo, dtype=np.float64)
            Xo = Xo - Xo.mean(axis=0)
            xn = np.linalg.norm(Xo, axis=0)
            xn[xn == 0] = np.inf
            out[s:s + len(part)] = (Xo / xn).T @ Cc
    return out


def attraction_phase(clusters: list, outliers: Sequence[int], source: FingerprintSource,
                     d: int, p_fa: float = 0.001, card_cap: int = 50, chunk: int = 4000):
    """Assign leftover fingerprints to clusters, best match first.

    Each step takes the (outlier, cluster) pair of highest correlation; it
    is accepted if above the null floor.  A cluster's centroid and bounded
    set change only while its cardinality stays within ``card_cap``.
    Returns ``(clusters, unclustered)``; ``clusters`` are updated in place.
    """
    outliers = list(outliers)
    if not clusters or not outliers:
        return clusters, outliers
    floor = null_floor(d, p_fa)
    C = np.column_stack([c.centroid for c in clusters])
    corr = _stream_corr(outliers, source, C, chunk)
    free = np.ones(len(outliers), dtype=bool)
    while free.any():
        score = np.where(free[:, None], corr, -np.inf)
        i, l = np.unravel_index(int(np.argmax(score)), score.shape)
        if not score[i, l] > floor:
            break
        free[i] = False
        col = outliers[i]
        cl = clusters[l]
        cl.members.append(col)
        if cl.cardinality <= card_cap:
            with source.loaded(cl.bounded + [col]) as Xs:
                Xs = np.asarray(Xs, dtype=np.float64)
                cross = Xs[:, :-1].T @ Xs[:, -1]
                x_new = Xs[:, -1].copy()
            m = len(cl.bounded)
            self_corr = float(x_new @ x_new)
            cl.gram = np.block([[cl.gram, cross[:, None]], [cross[None, :], np.array([[self_corr]])]])
            cl.centroid = (cl.centroid * m + x_new) / (m + 1)
            cl.bounded.append(col)
            C[:, l] = cl.centroid
            remaining = [outliers[k] for k in np.flatnonzero(free)]
            if remaining:
                corr[free, l] = _stream_corr(remaining, source, C[:, [l]], chunk)[:, 0]
    unclustered = [outliers[k] for k in np.flatnonzero(free)]
    return clusters, unclustered


@dataclass
class LsResult:
    result: ClusteringResult
    clusters: list
    num_batches: int
    recycle_steps: int
    timings: dict = field(default_factory=dict)
    peak_resident: int = 0
    resumed: list = field(default_factory=list)

    def summary_rows(self):
        """(cluster label, cardinality, rho) per final cluster."""
        rows = []
        for lab in range(self.result.num_clusters):
            c = self.clusters[lab]
            rows.append((lab, c.cardinality, c.rho))
        return rows


def _run_key(source: FingerprintSource, cfg: LsConfig, seed: int) -> str:
    h = hashlib.sha256()
    h.update(repr((cfg, seed, source.d)).encode())
    h.update("\x00".join(source.ids).encode())
    return h.hexdigest()[:16]


def _save_checkpoint(path: Path, key: str, phase: str, subs: list, pools: list) -> None:
    record = {
        "key": key,
        "phase": phase,
        "subclusters": [{"members": s.members, "bounded": s.bounded} for s in subs],
        "pools": pools,
    }
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(record), encoding="utf-8")
    tmp.replace(path)


def _load_checkpoint(path: Path, key: str, source: FingerprintSource):
    if not path.exists():
        return None
    record = json.loads(path.read_text(encoding="utf-8"))
    if record.get("key") != key:
        log.warning("ignoring checkpoint %s from a different run", path)
        return None
    subs = []
    for s in record["subclusters"]:
        with source.loaded(s["bounded"]) as Xb:
            Xb = np.asarray(Xb, dtype=np.float64)
            subs.append(SubCluster(list(s["members"]), list(s["bounded"]), Xb.T @ Xb, Xb.mean(axis=1)))
    return subs, [list(p) for p in record["pools"]]


def ls_ssc(data, cfg: LsConfig, seed: int = 0, *, reg: Optional[MergeRegressor] = None,
           workers: int = 1, checkpoint_dir=None) -> LsResult:
    """Full large-scale pipeline on a matrix, an SPNF path or a source.

    With ``checkpoint_dir`` the sub-cluster state is saved after the
    partition/recycle phase and after merging; a rerun with the same data,
    config and seed resumes from the latest saved phase.
    """
    source = as_source(data)
    reg = reg or MergeRegressor()
    n, d = source.n, source.d
    B = cfg.num_batches(n)
    R = cfg.resolved_recycle_steps(n)
    split_rng, recycle_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    timings = {}
    resumed = []
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    key = _run_key(source, cfg, seed)
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)

    state = None
    if ckdir is not None:
        state = _load_checkpoint(ckdir / "merge.json", key, source)
        if state is not None:
            resumed = ["partition", "merge"]
        else:
            state = _load_checkpoint(ckdir / "partition.json", key, source)
            if state is not None:
                resumed = ["partition"]

    if not resumed:
        t0 = time.perf_counter()
        batches = split_batches(n, cfg.batch_size, split_rng)
        if workers > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                parts = list(ex.map(lambda b: partition_batch(b, source, cfg), batches))
        else:
            parts = [partition_batch(b, source, cfg) for b in batches]
        subs = [s for part in parts for s in part[0]]
        pools = [part[1] for part in parts]
        timings["partition"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        more, pools = recycle(pools, source, cfg, R, recycle_rng)
        subs.extend(more)
        timings["recycle"] = time.perf_counter() - t0
        log.info("partition done n=%d B=%d R=%d subclusters=%d", n, B, R, len(subs))
        if ckdir is not None:
            _save_checkpoint(ckdir / "partition.json", key, "partition", subs, pools)
    else:
        subs, pools = state

    if "merge" not in resumed:
        t0 = time.perf_counter()
        subs = merge_phase(subs, source, reg, d, cfg.p_fa, cfg.card_cap)
        timings["merge"] = time.perf_counter() - t0
        if ckdir is not None:
            _save_checkpoint(ckdir / "merge.json", key, "merge", subs, pools)

    t0 = time.perf_counter()
    leftovers = sorted(c for pool in pools for c in pool)
    clusters, unclustered = attraction_phase(
        subs, leftovers, source, d, cfg.p_fa, cfg.card_cap, chunk=cfg.batch_size
    )
    timings["attraction"] = time.perf_counter() - t0

    raw = np.full(n, -1, dtype=np.int64)
    for k, c in enumerate(clusters):
        raw[c.members] = k
    labels, kappa = canonical_labels(raw)
    order = {}
    for old, new in zip(raw.tolist(), labels.tolist()):
        if old >= 0:
            order[new] = old
    ordered = [clusters[order[k]] for k in range(kappa)]
    result = ClusteringResult(source.ids, labels, kappa)
    return LsResult(result, ordered, B, R, timings, source.counter.peak_per_worker, resumed)
