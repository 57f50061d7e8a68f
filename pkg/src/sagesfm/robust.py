"""Robust l1 weight fit via ADMM.

Substituting this solver for the least-squares one turns SAGE into RSAGE:
the weights minimize the l1 distance of the observed entries to the current
subspace, a sparse component absorbs gross outliers, and the surrogate
residual (the scaled dual variable) takes the place of the l2 residual in
the factorization update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AdmmParams, ObservedColumn
from .errors import EmptyObservation

__all__ = ["AdmmParams", "SparseFit", "solve_weights_l1"]


@dataclass
class SparseFit:
    """Result of the l1 projection of one observed column.

    All vectors are aligned with the column's observed index set; entries off
    that set are zero by construction.
    """

    w: np.ndarray
    s_omega: np.ndarray
    gamma_omega: np.ndarray
    dual_omega: np.ndarray
    iters: int
    converged: bool


def _soft_threshold(z: np.ndarray, t: float) -> np.ndarray:
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def solve_weights_l1(U: np.ndarray, col: ObservedColumn,
                     params: AdmmParams | None = None) -> SparseFit:
    """Approximately minimize ``||U[omega] w - values||_1`` by ADMM.

    The constrained form splits the misfit into ``U w + s = v`` with an l1
    penalty on s; the scaled dual u tracks the constraint violation.  Per
    iteration: w is the least-squares fit of ``v - s - u``, s is the
    soft-thresholded remainder, and the dual accumulates the residual.  On
    exit the surrogate residual is ``gamma = rho * u`` (the dual after its
    final update), which is orthogonal to the subspace at the solution and
    bounded entrywise, so gross outliers do not leak into the subspace
    update.

    Non-convergence within the iteration cap returns the best iterate with
    ``converged=False``; that is a signal, not a failure.
    """
    params = params or AdmmParams()
    if col.n_observed == 0:
        raise EmptyObservation("column has no observed entries")
    UO = U[col.omega]
    vO = col.values
    m, k = UO.shape
    rho = params.rho

    # Factor once; U is fixed for the whole solve.
    Q, Rq = np.linalg.qr(UO)
    diag = np.abs(np.diag(Rq))
    well_posed = diag.min() > 1e-12 * max(diag.max(), 1.0)

    def ls(rhs):
        if well_posed:
            return np.linalg.solve(Rq, Q.T @ rhs)
        return np.linalg.lstsq(UO, rhs, rcond=None)[0]

    w = ls(vO)
    s = np.zeros(m)
    u = np.zeros(m)
    converged = False
    iters = 0
    for iters in range(1, params.max_iters + 1):
        w = ls(vO - s - u)
        Uw = UO @ w
        s_prev = s
        s = _soft_threshold(vO - Uw - u, 1.0 / rho)
        resid = Uw + s - vO
        u = u + resid
        r_pri = np.linalg.norm(resid)
        r_dual = rho * np.linalg.norm(UO.T @ (s - s_prev))
        eps_pri = np.sqrt(m) * params.tol_abs + params.tol_rel * max(
            np.linalg.norm(Uw), np.linalg.norm(s), np.linalg.norm(vO))
        eps_dual = np.sqrt(k) * params.tol_abs + params.tol_rel * rho * np.linalg.norm(
            UO.T @ u)
        if r_pri <= eps_pri and r_dual <= eps_dual:
            converged = True
            break
    gamma = rho * u
    return SparseFit(w=w, s_omega=s, gamma_omega=gamma, dual_omega=rho * u,
                     iters=iters, converged=converged)
