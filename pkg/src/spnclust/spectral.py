"""Affinity graph, eigengap model selection and normalized spectral clustering."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, eigh
from sklearn.cluster import KMeans

from .admm import SparseRepr, constrained_lasso
from .config import SINGLE_SOLVE_CAP, AdmmConfig
from .errors import CapacityExceeded, DegenerateGraph, NumericalFailure

log = logging.getLogger(__name__)

DEGREE_FLOOR = 1e-12
KMEANS_RESTARTS = 20
KMEANS_MAX_ITER = 300


@dataclass
class ClusteringResult:
    """Per-item labels; ``-1`` marks an unclustered item.

    Cluster ids are contiguous ``0 .. num_clusters-1``.
    """

    ids: tuple
    labels: np.ndarray
    num_clusters: int

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (len(self.ids),):
            raise ValueError("one label per id required")
        used = np.unique(self.labels[self.labels >= 0])
        if not np.array_equal(used, np.arange(self.num_clusters)):
            raise ValueError("cluster ids must be contiguous 0..num_clusters-1")
        if np.any(self.labels < -1):
            raise ValueError("labels must be >= -1")

    @property
    def unclustered(self) -> list:
        return [i for i, lab in zip(self.ids, self.labels) if lab < 0]

    def as_dict(self) -> dict:
        return dict(zip(self.ids, self.labels.tolist()))


def canonical_labels(labels) -> tuple[np.ndarray, int]:
    """Renumber non-negative labels by first appearance; -1 is kept."""
    labels = np.asarray(labels)
    out = np.full(labels.shape, -1, dtype=np.int64)
    mapping = {}
    for i, lab in enumerate(labels.tolist()):
        if lab is None or lab < 0:
            continue
        out[i] = mapping.setdefault(lab, len(mapping))
    return out, len(mapping)


def symmetrize(Z) -> np.ndarray:
    """Undirected affinity ``(Z + Z^T) / 2``."""
    Z = Z.Z if isinstance(Z, SparseRepr) else np.asarray(Z, dtype=np.float64)
    return 0.5 * (Z + Z.T)


def normalized_laplacian(G: np.ndarray) -> np.ndarray:
    """``I - D^{-1/2} G D^{-1/2}`` with degrees floored for isolated vertices."""
    deg = np.maximum(G.sum(axis=1), DEGREE_FLOOR)
    s = 1.0 / np.sqrt(deg)
    L = -(s[:, None] * G * s[None, :])
    L[np.diag_indices_from(L)] += 1.0
    return 0.5 * (L + L.T)


def _spectrum(G):
    try:
        vals, vecs = eigh(normalized_laplacian(G))
    except LinAlgError as exc:
        raise NumericalFailure("eigendecomposition of the Laplacian failed") from exc
    if not np.all(np.isfinite(vals)):
        raise NumericalFailure("non-finite Laplacian spectrum")
    return vals, vecs


def estimate_num_clusters(G: np.ndarray, kappa_max: int, *, eigenvalues=None) -> int:
    """Position of the largest gap among the ``kappa_max + 1`` smallest eigenvalues.

    Ties resolve to the smaller count.  A graph without edges triggers a
    :class:`DegenerateGraph` warning and returns ``n``.
    """
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    if not 1 <= kappa_max <= n - 1:
        raise ValueError(f"kappa_max must lie in [1, {n - 1}], got {kappa_max}")
    if not np.any(G):
        warnings.warn("affinity graph has no edges", DegenerateGraph, stacklevel=2)
        return n
    vals = _spectrum(G)[0] if eigenvalues is None else np.asarray(eigenvalues)
    gaps = np.diff(vals[: kappa_max + 1])
    return int(np.argmax(gaps)) + 1


def spectral_embedding(G: np.ndarray, kappa: int, *, vecs=None) -> np.ndarray:
    """Rows of the ``kappa`` bottom Laplacian eigenvectors, scaled to unit length."""
    if vecs is None:
        vecs = _spectrum(G)[1]
    E = np.array(vecs[:, :kappa])
    norms = np.linalg.norm(E, axis=1, keepdims=True)
    np.divide(E, norms, out=E, where=norms > 0)
    return E


def spectral_cluster(G: np.ndarray, kappa: int, seed: int = 0, *, ids=None, vecs=None) -> ClusteringResult:
    """Ng-Jordan-Weiss spectral clustering of ``G`` into ``kappa`` groups."""
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    ids = tuple(ids) if ids is not None else tuple(str(i) for i in range(n))
    if not 1 <= kappa <= n:
        raise ValueError(f"kappa must lie in [1, {n}]")
    if kappa == 1:
        return ClusteringResult(ids, np.zeros(n, dtype=np.int64), 1)
    if kappa == n:
        return ClusteringResult(ids, np.arange(n), n)
    E = spectral_embedding(G, kappa, vecs=vecs)
    km = KMeans(
        n_clusters=kappa,
        init="k-means++",
        n_init=KMEANS_RESTARTS,
        max_iter=KMEANS_MAX_ITER,
        random_state=seed,
    )
    labels, k = canonical_labels(km.fit_predict(E))
    return ClusteringResult(ids, labels, k)


def ssc_nc(
    X,
    cfg: AdmmConfig,
    kappa_max: int = 50,
    seed: int = 0,
    *,
    ids=None,
    single_solve_cap: int = SINGLE_SOLVE_CAP,
    trace=None,
) -> ClusteringResult:
    """Single-solve pipeline: LASSO, symmetrize, eigengap, spectral clustering.

    ``X`` may be a FingerprintMatrix or a raw (d x n) array.
    """
    if hasattr(X, "ids") and hasattr(X, "X"):
        ids = X.ids if ids is None else ids
        X = X.X
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[1]
    ids = tuple(ids) if ids is not None else tuple(str(i) for i in range(n))
    if n > single_solve_cap:
        raise CapacityExceeded(
            f"n={n} exceeds the single-solve cap {single_solve_cap}; use ls-ssc mode"
        )
    if n == 1:
        return ClusteringResult(ids, np.zeros(1, dtype=np.int64), 1)
    rep = constrained_lasso(X, cfg, trace=trace)
    G = symmetrize(rep)
    kmax = min(kappa_max, n - 1)
    if not np.any(G):
        kappa = estimate_num_clusters(G, kmax)
        return spectral_cluster(G, kappa, seed, ids=ids)
    vals, vecs = _spectrum(G)
    kappa = estimate_num_clusters(G, kmax, eigenvalues=vals)
    log.info("ssc_nc n=%d iters=%d kappa=%d", n, rep.iterations, kappa)
    return spectral_cluster(G, kappa, seed, ids=ids, vecs=vecs)
