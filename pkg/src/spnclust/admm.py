"""Non-negative, zero-diagonal LASSO self-representation solved with ADMM.

Solves::

    minimize    0.5 * ||X Z - X||_F^2 + gamma * ||Z||_1
    subject to  diag(Z) = 0,  Z >= 0

by splitting ``Z = V``; the constraints are imposed on ``V`` through
element-wise projections after the soft-threshold step.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .config import AdmmConfig
from .errors import NotConverged, NumericalFailure

log = logging.getLogger(__name__)


@dataclass
class SparseRepr:
    """Solver output.  ``Z`` is the projected iterate, so it is feasible exactly."""

    Z: np.ndarray
    iterations: int
    final_gap: float
    converged: bool
    gaps: list = field(default_factory=list, repr=False)


def soft_threshold(a, nu):
    """Shrink ``a`` toward zero by ``nu`` (scalar or array)."""
    if np.any(np.asarray(nu) < 0):
        raise ValueError("threshold must be non-negative")
    a = np.asarray(a, dtype=np.float64)
    out = np.sign(a) * np.maximum(np.abs(a) - nu, 0.0)
    return float(out) if out.ndim == 0 else out


def project_zero_diag(M: np.ndarray) -> np.ndarray:
    M = np.array(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("square matrix required")
    np.fill_diagonal(M, 0.0)
    return M


def project_nonneg(M: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(M, dtype=np.float64), 0.0)


def objective_value(X, Z, gamma) -> float:
    """``0.5 * ||XZ - X||_F^2 + gamma * ||Z||_1``."""
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    R = X @ Z - X
    return 0.5 * float(np.sum(R * R)) + gamma * float(np.abs(Z).sum())


def objective_from_gram(G, Z, gamma) -> float:
    """Same as :func:`objective_value` but from the Gram matrix ``X^T X``.

    Uses ``||XZ - X||^2 = tr(Z^T G Z) - 2 tr(G Z) + tr(G)``.
    """
    GZ = G @ Z
    fit = float(np.sum(Z * GZ)) - 2.0 * float(np.trace(GZ)) + float(np.trace(G))
    return 0.5 * fit + gamma * float(np.abs(Z).sum())


def constrained_lasso(
    X,
    cfg: AdmmConfig,
    *,
    gram: Optional[np.ndarray] = None,
    trace: Optional[TextIO] = None,
) -> SparseRepr:
    """Run ADMM on the data matrix ``X`` (d x n, unit-norm columns).

    ``gram`` may be passed instead of recomputing ``X^T X``.  When ``trace``
    is a writable text stream, one ``iter,gap,objective`` CSV row is written
    per iteration.  Hitting ``cfg.max_iters`` emits :class:`NotConverged`
    and returns the last iterate with ``converged=False``.
    """
    if gram is None:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        gram = X.T @ X
    G = np.asarray(gram, dtype=np.float64)
    n = G.shape[0]
    if n < 2:
        raise ValueError("need at least two columns")
    if not np.all(np.isfinite(G)):
        raise NumericalFailure("data contain non-finite entries")

    eta, gamma = cfg.eta, cfg.gamma
    try:
        factor = cho_factor(G + eta * np.eye(n), lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalFailure("Cholesky factorization failed") from exc

    Z = np.zeros((n, n))
    V = np.zeros((n, n))
    Lam = np.zeros((n, n))
    thresh = gamma / eta
    gap = np.inf
    gaps = []
    if trace is not None:
        trace.write("iter,gap,objective\n")

    it = 0
    for it in range(1, cfg.max_iters + 1):
        Z = cho_solve(factor, G - Lam + eta * V, check_finite=False)
        V = soft_threshold(Z + Lam / eta, thresh)
        V = project_zero_diag(project_nonneg(V))
        diff = Z - V
        Lam += eta * diff
        gap = float(np.abs(diff).max())
        gaps.append(gap)
        if not np.isfinite(gap):
            raise NumericalFailure(f"iterates became non-finite at iteration {it}")
        if trace is not None:
            trace.write(f"{it},{gap:.6e},{objective_from_gram(G, V, gamma):.10e}\n")
        if gap < cfg.epsilon:
            break

    converged = gap < cfg.epsilon
    if not converged:
        warnings.warn(
            f"ADMM stopped after {it} iterations with gap {gap:.3e} >= {cfg.epsilon:g}",
            NotConverged,
            stacklevel=2,
        )
    log.debug("admm n=%d iters=%d gap=%.3e", n, it, gap)
    return SparseRepr(Z=V, iterations=it, final_gap=gap, converged=converged, gaps=gaps)
