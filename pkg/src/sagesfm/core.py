"""Rank-k factorization state and the single-column update at the heart of
the SAGE / RSAGE / MD-ISVD family.

The live estimate of a partially observed matrix W is kept factored as
``U @ diag(d) @ R.T`` with U column-orthonormal.  When ``ones_column`` is set
(the structure-from-motion configuration) the last column of U is pinned to
the constant vector ``1/sqrt(n)`` so that data offset from the origin stays
representable; the matching last column of R stores the translation times
``sqrt(n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ColumnSkipped,
    EmptyColumn,
    EmptyObservation,
    InvalidDimension,
    NumericalFault,
)

VARIANTS = ("sage", "md-isvd")


@dataclass
class ObservedColumn:
    """One streamed column: observed row indices, their values, identity."""

    omega: np.ndarray
    values: np.ndarray
    column_id: int = -1
    frame_id: int = -1

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.intp)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.omega.shape != self.values.shape or self.omega.ndim != 1:
            raise InvalidDimension("omega and values must be 1-d and equal length")
        if self.omega.size and np.any(np.diff(self.omega) <= 0):
            raise InvalidDimension("omega indices must be strictly increasing")
        if self.omega.size and self.omega[0] < 0:
            raise InvalidDimension("omega indices must be non-negative")
        if not np.all(np.isfinite(self.values)):
            raise NumericalFault("observed values must be finite")

    @property
    def n_observed(self) -> int:
        return int(self.omega.size)


@dataclass
class AdmmParams:
    """Parameters of the ADMM solver behind the robust l1 weight fit."""

    rho: float = 1.8
    max_iters: int = 60
    tol_abs: float = 1e-7
    tol_rel: float = 1e-5

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class UpdateConfig:
    """Knobs of a single-column update.

    alpha_c : float or None
        None keeps the residual unscaled (alpha = 1).  A positive value C
        selects the decaying schedule alpha = C / (C + visits) driven by
        per-column visit counts.
    solver : "l2" or "l1"
        Least-squares weights, or the robust ADMM fit ("l1" turns SAGE into
        RSAGE; see Table of variants).
    min_observed : int or None
        Columns with fewer observed entries raise ColumnSkipped.  None means
        rank + 1.
    """

    alpha_c: float | None = None
    solver: str = "l2"
    admm: AdmmParams = field(default_factory=AdmmParams)
    min_observed: int | None = None
    residual_floor_rel: float = 1e-12
    residual_floor_abs: float = 1e-300

    def __post_init__(self):
        if self.alpha_c is not None and self.alpha_c <= 0:
            raise ValueError("alpha_c must be positive")
        if self.solver not in ("l2", "l1"):
            raise ValueError("solver must be 'l2' or 'l1'")

    def alpha_for(self, visits: int) -> float:
        if self.alpha_c is None:
            return 1.0
        return self.alpha_c / (self.alpha_c + visits)

    def min_observed_for(self, k: int) -> int:
        m = k + 1 if self.min_observed is None else self.min_observed
        if m < k:
            raise ValueError("min_observed must be at least the rank")
        return m


@dataclass
class UpdateOutcome:
    """Diagnostics of one column update."""

    w: np.ndarray
    r_norm: float
    center_singular_values: np.ndarray
    dropped_value: float


@dataclass
class FactorModel:
    """Factorization state ``U @ diag(d) @ R.T`` of a partially observed matrix.

    U : (n, k) with orthonormal columns.
    d : (k,) diagonal entries; all ones for the "sage" variant, singular-value
        estimates for "md-isvd" (the ones entry stays pinned at 1).
    R : (T, k); one row per absorbed column.  For "md-isvd" the non-ones
        columns are kept orthonormal.
    """

    U: np.ndarray
    d: np.ndarray
    R: np.ndarray
    n: int
    k: int
    variant: str = "sage"
    ones_column: bool = True

    @property
    def n_cols(self) -> int:
        return int(self.R.shape[0])

    @property
    def k_bar(self) -> int:
        return self.k - 1 if self.ones_column else self.k

    @property
    def ones_index(self) -> int:
        return self.k - 1

    @property
    def tau(self) -> np.ndarray:
        """Per-column translation (last column of R divided by sqrt(n))."""
        if not self.ones_column:
            raise InvalidDimension("model has no ones column")
        return self.R[:, -1] / np.sqrt(self.n)

    def copy(self) -> "FactorModel":
        return replace(self, U=self.U.copy(), d=self.d.copy(), R=self.R.copy())


def _ones_direction(n: int) -> np.ndarray:
    return np.full(n, 1.0 / np.sqrt(n))


def random_init(n0: int, k: int, variant: str = "sage", seed: int | None = None,
                ones_column: bool = True) -> FactorModel:
    """Fresh model with a random orthonormal basis and no absorbed columns.

    With the ones column enabled, k - 1 random directions are orthogonalized
    against the constant vector and each other; the constant vector is the
    exact last column.
    """
    _check_init(n0, k, variant)
    rng = np.random.default_rng(seed)
    if ones_column:
        e = _ones_direction(n0)
        basis = np.hstack([e[:, None], rng.standard_normal((n0, k - 1))])
        q, _ = np.linalg.qr(basis)
        U = np.hstack([q[:, 1:k], e[:, None]])
    else:
        U, _ = np.linalg.qr(rng.standard_normal((n0, k)))
    return FactorModel(U=U, d=np.ones(k), R=np.zeros((0, k)), n=n0, k=k,
                       variant=variant, ones_column=ones_column)


def column_mean_init(values: np.ndarray, mask: np.ndarray, k: int,
                     variant: str = "sage", ones_column: bool = True) -> FactorModel:
    """Deterministic model: fill missing entries with column means, factor.

    The filled matrix is factored at rank k with the constant direction forced
    to be the exact last column (the remaining directions come from the best
    rank-(k-1) fit of the mean-removed matrix).  R covers every column of the
    input, so a batch run starting from this model only revisits.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n, T = values.shape
    _check_init(n, k, variant)
    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        raise EmptyColumn(f"column {int(np.argmin(counts))} has no observed entries")
    sums = np.where(mask, values, 0.0).sum(axis=0)
    filled = np.where(mask, values, (sums / counts)[None, :])
    if ones_column:
        e = _ones_direction(n)
        offsets = e @ filled
        centered = filled - np.outer(e, offsets)
        Uc, sc, Vtc = np.linalg.svd(centered, full_matrices=False)
        kb = k - 1
        U = np.hstack([Uc[:, :kb], e[:, None]])
        if variant == "sage":
            d = np.ones(k)
            R = np.hstack([Vtc[:kb].T * sc[:kb], offsets[:, None]])
        else:
            d = np.append(np.maximum(sc[:kb], np.finfo(float).tiny), 1.0)
            R = np.hstack([Vtc[:kb].T, offsets[:, None]])
    else:
        Uc, sc, Vtc = np.linalg.svd(filled, full_matrices=False)
        U = Uc[:, :k]
        if variant == "sage":
            d = np.ones(k)
            R = Vtc[:k].T * sc[:k]
        else:
            d = np.maximum(sc[:k], np.finfo(float).tiny)
            R = Vtc[:k].T
    return FactorModel(U=U, d=d, R=R, n=n, k=k, variant=variant,
                       ones_column=ones_column)


def _check_init(n0: int, k: int, variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if k < 2:
        raise InvalidDimension("rank must be at least 2")
    if n0 < k:
        raise InvalidDimension(f"need at least k={k} rows, got {n0}")


def solve_weights_l2(U: np.ndarray, col: ObservedColumn):
    """Least-squares projection weights of an observed column.

    Returns ``(w, r_omega)`` where w minimizes ``||U[omega] w - values||_2``
    (minimum-norm solution if the restricted basis is rank deficient) and
    r_omega holds the residual on the observed rows; off-omega entries of the
    residual are zero by definition.
    """
    if col.n_observed == 0:
        raise EmptyObservation("column has no observed entries")
    UO = U[col.omega]
    w = _lstsq(UO, col.values)
    r_omega = col.values - UO @ w
    return w, r_omega


def _lstsq(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Normal equations are much faster for tall-thin A and fine whenever the
    # k x k Gram matrix is comfortably invertible; fall back to the
    # minimum-norm solution otherwise.
    G = A.T @ A
    try:
        c = np.linalg.cholesky(G)
        y = np.linalg.solve(c, A.T @ b)
        return np.linalg.solve(c.T, y)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0]


def impute_column(U: np.ndarray, w: np.ndarray, r_omega: np.ndarray,
                  col: ObservedColumn) -> np.ndarray:
    """Full column implied by a weight solve: observed values kept, the rest
    predicted as U w.  Equivalently ``U w + r`` with r scattered on omega."""
    v = U @ w
    v[col.omega] += r_omega
    return v


def center_svd(dbar: np.ndarray, wbar: np.ndarray, rho: float):
    """SVD of the small update matrix ``[[diag(dbar), wbar], [0, rho]]``.

    Returns full square factors (Utilde, sigma, Vtilde) with sigma sorted
    nonincreasing; handles rho = 0 (the matrix then has rank at most k).
    """
    kb = dbar.shape[0]
    C = np.zeros((kb + 1, kb + 1))
    C[:kb, :kb] = np.diag(dbar)
    C[:kb, kb] = wbar
    C[kb, kb] = rho
    Ut, s, Vt = np.linalg.svd(C)
    return Ut, s, Vt.T


def meta_update(model: FactorModel, col: ObservedColumn, alpha: float = 1.0,
                config: UpdateConfig | None = None):
    """Absorb one observed column into the factorization.

    Solves for projection weights and residual (l2 or the robust l1 fit per
    the config), forms the small center matrix ``[[Dbar, wbar], [0,
    alpha*||r||]]``, takes its SVD, rotates U into the span extended by the
    residual direction, appends a row to R, and drops the discarded smallest
    direction.  The variant decides where the singular values go: "sage"
    folds them into R and keeps D = I, "md-isvd" keeps them in D and leaves
    the non-ones block of R orthonormal.  A residual below the configured
    floor degenerates into a pure rotation of the existing factors plus the
    new R row.

    Returns ``(updated_model, UpdateOutcome)``.  The input model is not
    modified.
    """
    config = config or UpdateConfig()
    if col.n_observed < config.min_observed_for(model.k):
        raise ColumnSkipped(
            f"column {col.column_id} has {col.n_observed} observed entries, "
            f"needs {config.min_observed_for(model.k)}")
    if col.omega.size and col.omega[-1] >= model.n:
        raise InvalidDimension("column references rows beyond the model")

    n, k, kb = model.n, model.k, model.k_bar
    if config.solver == "l1":
        from .robust import solve_weights_l1

        fit = solve_weights_l1(model.U, col, config.admm)
        w = fit.w
        rvec = np.zeros(n)
        rvec[col.omega] = fit.gamma_omega
        # The surrogate residual is orthogonal to U only up to the ADMM
        # tolerance; project so the extended basis stays orthonormal.
        rvec -= model.U @ (model.U.T @ rvec)
    else:
        w, r_omega = solve_weights_l2(model.U, col)
        rvec = np.zeros(n)
        rvec[col.omega] = r_omega
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(rvec))):
        raise NumericalFault("non-finite weight solve")

    r_norm = float(np.linalg.norm(rvec))
    if model.ones_column:
        wbar, gamma = w[:kb], w[kb]
        Ub, db, Rb = model.U[:, :kb], model.d[:kb], model.R[:, :kb]
        tau_col = model.R[:, kb]
    else:
        wbar, gamma = w, 0.0
        Ub, db, Rb = model.U, model.d, model.R
        tau_col = None

    floor = max(config.residual_floor_rel * float(np.linalg.norm(col.values)),
                config.residual_floor_abs)
    rho = alpha * r_norm
    T = model.n_cols
    grow = np.zeros((T + 1, kb + 1))
    grow[:T, :kb] = Rb
    grow[T, kb] = 1.0

    if rho <= floor:
        # Zero (or suppressed) residual: the augmented matrix already lies in
        # the current span, so the update is a rotation plus a new R row.
        B = np.hstack([np.diag(db), wbar[:, None]])
        Ut, s, Vt = np.linalg.svd(B, full_matrices=False)
        V = Vt.T
        Ub_new = Ub @ Ut
        center_s = s
        dropped = 0.0
    else:
        Ut, s, V = center_svd(db, wbar, rho)
        Ub_new = np.hstack([Ub, (rvec / r_norm)[:, None]]) @ Ut[:, :kb]
        V = V[:, :kb]
        s_kept = s[:kb]
        center_s = s
        dropped = float(s[kb])
        s = s_kept
    if model.variant == "sage":
        Rb_new = grow @ (V * s)
        db_new = np.ones(kb)
    else:
        Rb_new = grow @ V
        db_new = s.copy()

    if model.ones_column:
        U_new = np.hstack([Ub_new, _ones_direction(n)[:, None]])
        d_new = np.append(db_new, 1.0)
        R_new = np.hstack([Rb_new, np.append(tau_col, gamma)[:, None]])
    else:
        U_new, d_new, R_new = Ub_new, db_new, Rb_new
    out = UpdateOutcome(w=w, r_norm=r_norm, center_singular_values=center_s,
                        dropped_value=dropped)
    updated = FactorModel(U=U_new, d=d_new, R=R_new, n=n, k=k,
                          variant=model.variant, ones_column=model.ones_column)
    return updated, out


def reconstruct(model: FactorModel, rows=None, cols=None) -> np.ndarray:
    """Dense block of the current estimate ``U diag(d) R^T``."""
    U, R = model.U, model.R
    if rows is not None:
        rows = np.asarray(rows, dtype=np.intp)
        if rows.size and (rows.min() < 0 or rows.max() >= model.n):
            raise IndexError("row subset out of range")
        U = U[rows]
    if cols is not None:
        cols = np.asarray(cols, dtype=np.intp)
        if cols.size and (cols.min() < 0 or cols.max() >= model.n_cols):
            raise IndexError("column subset out of range")
        R = R[cols]
    return (U * model.d) @ R.T


def reorthonormalize(model: FactorModel) -> FactorModel:
    """Compensated re-orthonormalization for very long runs.

    Re-factors U through a QR decomposition and pushes the correction into R
    (and d for "md-isvd") so the product is unchanged.  Useful as periodic
    maintenance; a single update drifts only at machine-epsilon scale.
    """
    kb = model.k_bar
    Ub, db, Rb = model.U[:, :kb], model.d[:kb], model.R[:, :kb]
    Q, S = np.linalg.qr(Ub)
    if model.variant == "sage":
        Ub_new, db_new, Rb_new = Q, np.ones(kb), Rb @ S.T
    else:
        u2, s2, vt2 = np.linalg.svd(S * db)
        Ub_new, db_new, Rb_new = Q @ u2, s2, Rb @ vt2.T
    if model.ones_column:
        U = np.hstack([Ub_new, _ones_direction(model.n)[:, None]])
        d = np.append(db_new, 1.0)
        R = np.hstack([Rb_new, model.R[:, -1:]])
    else:
        U, d, R = Ub_new, db_new, Rb_new
    return FactorModel(U=U, d=d, R=R, n=model.n, k=model.k,
                       variant=model.variant, ones_column=model.ones_column)
