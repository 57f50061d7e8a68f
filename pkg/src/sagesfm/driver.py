"""Streaming and batch drivers: row additions, column revisits, downdating,
and the outer loops that feed columns to the factorization update."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import FactorModel, ObservedColumn, UpdateConfig
from .errors import (
    ColumnSkipped,
    DegenerateMatrix,
    DowndateDegenerate,
    InvalidDimension,
    StreamError,
)
from .matrix import MeasurementMatrix

# Periodic compensated re-orthonormalization; drift per update is at machine
# epsilon so this only matters for very long runs.
_REORTH_EVERY = 20000

ALGORITHMS = ("sage", "sage100", "rsage", "rsage100", "md-isvd")


def algorithm_config(name: str, min_observed: int | None = None):
    """Map a public algorithm name to (variant, UpdateConfig)."""
    presets = {
        "sage": ("sage", dict()),
        "sage100": ("sage", dict(alpha_c=100.0)),
        "rsage": ("sage", dict(solver="l1")),
        "rsage100": ("sage", dict(solver="l1", alpha_c=100.0)),
        "md-isvd": ("md-isvd", dict()),
    }
    if name not in presets:
        raise ValueError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")
    variant, kw = presets[name]
    return variant, UpdateConfig(min_observed=min_observed, **kw)


@dataclass
class StoredColumn:
    col: ObservedColumn | None
    visits: int = 0
    row: int | None = None

    @property
    def evicted(self) -> bool:
        return self.col is None


class ColumnStore:
    """Append-only store of observed columns with visit counts.

    An optional capacity bounds how many columns keep their data; the oldest
    stored column is evicted first.  Evicted columns keep their R-row mapping
    but can never be revisited.
    """

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.entries: list[StoredColumn] = []
        self._by_id: dict[int, int] = {}
        self._live = 0

    def __len__(self) -> int:
        return len(self.entries)

    def index_of(self, column_id: int) -> int | None:
        return self._by_id.get(column_id)

    def get(self, index: int) -> StoredColumn:
        return self.entries[index]

    def add(self, col: ObservedColumn) -> int:
        if col.column_id in self._by_id:
            raise ValueError(f"column {col.column_id} already stored")
        self.entries.append(StoredColumn(col=col))
        self._by_id[col.column_id] = len(self.entries) - 1
        self._live += 1
        if self.capacity is not None and self._live > self.capacity:
            for e in self.entries:
                if not e.evicted:
                    e.col = None
                    self._live -= 1
                    break
        return len(self.entries) - 1


def add_rows(model: FactorModel, kappa: int) -> FactorModel:
    """Extend the model by kappa new rows (newly appearing tracks).

    New rows are zero in the non-ones directions; the ones column is rescaled
    to ``1/sqrt(n + kappa)`` and the stored translation column of R by
    ``sqrt((n + kappa) / n)`` so the reconstruction of existing rows is
    unchanged.
    """
    if kappa < 1:
        raise InvalidDimension("kappa must be at least 1")
    n_new = model.n + kappa
    pad = np.zeros((kappa, model.k))
    U = np.vstack([model.U, pad])
    R = model.R.copy()
    if model.ones_column:
        U[:, -1] = 1.0 / np.sqrt(n_new)
        R[:, -1] *= np.sqrt(n_new / model.n)
    return FactorModel(U=U, d=model.d.copy(), R=R, n=n_new, k=model.k,
                       variant=model.variant, ones_column=model.ones_column)


def remove_column_contribution(model: FactorModel, t: int) -> FactorModel:
    """Drop column t's contribution ahead of a revisit.

    For "sage" the row of R is simply removed.  For "md-isvd" the rank-one
    contribution is first downdated so the non-ones block of R stays
    orthonormal and d diagonal; a downdate that would produce a non-positive
    singular value is clamped and flagged with a DowndateDegenerate warning.
    """
    if not 0 <= t < model.n_cols:
        raise IndexError(f"no column at row {t}")
    if model.variant == "sage":
        return FactorModel(U=model.U.copy(), d=model.d.copy(),
                           R=np.delete(model.R, t, axis=0), n=model.n, k=model.k,
                           variant=model.variant, ones_column=model.ones_column)
    kb = model.k_bar
    db = model.d[:kb]
    Rb = model.R[:, :kb]
    q = Rb[t]
    Rb_minus = np.delete(Rb, t, axis=0)
    G = (np.eye(kb) - np.outer(q, q)) * db[None, :] * db[:, None]
    lam, vecs = np.linalg.eigh(G)
    lam, vecs = lam[::-1], vecs[:, ::-1]
    floor_sq = (1e-12 * np.sqrt(max(lam[0], 0.0))) ** 2
    if lam[-1] <= floor_sq:
        warnings.warn("downdate produced a non-positive singular value; clamped",
                      DowndateDegenerate)
        lam = np.maximum(lam, max(floor_sq, np.finfo(float).tiny))
    d_new = np.sqrt(lam)
    Ub_new = model.U[:, :kb] @ vecs
    Rb_new = (Rb_minus * db[None, :]) @ vecs / d_new[None, :]
    if model.ones_column:
        U = np.hstack([Ub_new, model.U[:, -1:]])
        d = np.append(d_new, 1.0)
        R = np.hstack([Rb_new, np.delete(model.R[:, -1], t)[:, None]])
    else:
        U, d, R = Ub_new, d_new, Rb_new
    return FactorModel(U=U, d=d, R=R, n=model.n, k=model.k,
                       variant=model.variant, ones_column=model.ones_column)


def process_column(model: FactorModel, store: ColumnStore, col_or_index,
                   config: UpdateConfig) -> FactorModel:
    """Process one column through the update, tracking revisit bookkeeping.

    A new column is appended to the store and gains a row of R.  A revisit
    first removes its prior contribution, then updates, then moves the fresh
    last row of R back into the original position so row order keeps matching
    column order.  Skipped columns (too few observations) leave the model
    unchanged.
    """
    if isinstance(col_or_index, (int, np.integer)):
        idx = int(col_or_index)
        entry = store.get(idx)
        if entry.evicted:
            return model
        col = entry.col
    else:
        col = col_or_index
        idx = store.index_of(col.column_id)
        if idx is None:
            idx = store.add(col)
        entry = store.get(idx)

    alpha = config.alpha_for(entry.visits)
    if entry.row is None:
        try:
            model, _ = core.meta_update(model, col, alpha=alpha, config=config)
        except ColumnSkipped:
            return model
        entry.row = model.n_cols - 1
        entry.visits += 1
        return model

    t = entry.row
    candidate = remove_column_contribution(model, t)
    try:
        candidate, _ = core.meta_update(candidate, col, alpha=alpha, config=config)
    except ColumnSkipped:
        return model
    R = candidate.R
    R = np.insert(R[:-1], t, R[-1], axis=0)
    model = FactorModel(U=candidate.U, d=candidate.d, R=R, n=candidate.n,
                        k=candidate.k, variant=candidate.variant,
                        ones_column=candidate.ones_column)
    entry.visits += 1
    return model


def rmse_2d_store(model: FactorModel, store: ColumnStore) -> float:
    """2D RMSE of the current estimate over the observed entries of every
    processed column (skipped and evicted columns keep no residual to score
    against unless their data is still stored)."""
    sq = 0.0
    cnt = 0
    Ud = model.U * model.d
    for entry in store.entries:
        if entry.row is None or entry.evicted:
            continue
        col = entry.col
        est = Ud[col.omega] @ model.R[entry.row]
        sq += float(((est - col.values) ** 2).sum())
        cnt += col.n_observed
    if cnt == 0:
        raise DegenerateMatrix("no processed column to evaluate")
    return float(np.sqrt(sq / cnt))


@dataclass
class LogRecord:
    index: int
    seconds: float
    rmse_2d: float
    n_cols: int
    n_rows: int


@dataclass
class RunLog:
    records: list[LogRecord] = field(default_factory=list)
    snapshots: dict[int, FactorModel] = field(default_factory=dict)

    def rmse_series(self) -> np.ndarray:
        return np.array([r.rmse_2d for r in self.records])

    def seconds_series(self) -> np.ndarray:
        return np.array([r.seconds for r in self.records])


def converged_by_rel_drop(history, rel_drop: float = 0.01, window: int = 10) -> bool:
    """True once the error failed to drop by ``rel_drop`` (relative) over the
    last ``window`` entries of the history."""
    if len(history) < window + 1:
        return False
    prev = history[-1 - window]
    cur = history[-1]
    if prev <= 0:
        return True
    return (prev - cur) / prev < rel_drop


@dataclass
class BatchConfig:
    """Configuration of a randomized-pass batch run."""

    rank: int = 4
    algorithm: str = "sage"
    init: str = "random"
    seed: int | None = 0
    rel_drop: float = 0.01
    window: int = 10
    max_seconds: float | None = None
    max_passes: int | None = None
    target_rmse: float | None = None
    min_observed: int | None = None
    store_capacity: int | None = None


def run_batch(M: MeasurementMatrix, config: BatchConfig | None = None):
    """Randomized passes over the columns of a measurement matrix.

    Each pass visits every column once in a freshly shuffled order (seeded).
    The run stops when the 2D RMSE fails to drop by ``rel_drop`` over
    ``window`` passes, or any of the optional budget limits is hit.

    Returns ``(model, RunLog)`` with one log record per pass.
    """
    config = config or BatchConfig()
    variant, update = algorithm_config(config.algorithm, config.min_observed)
    rng = np.random.default_rng(config.seed)
    n, T = M.n_rows, M.n_cols
    store = ColumnStore(capacity=config.store_capacity)
    for col in M.columns():
        store.add(col)
    if config.init == "mean":
        model = core.column_mean_init(M.values, M.mask, config.rank, variant)
        for j in range(T):
            store.get(j).row = j
    elif config.init == "random":
        model = core.random_init(n, config.rank, variant, seed=rng.integers(2 ** 63))
    else:
        raise ValueError(f"unknown init {config.init!r}")

    log = RunLog()
    t0 = time.perf_counter()
    updates = 0
    history: list[float] = []
    n_pass = 0
    while True:
        n_pass += 1
        order = rng.permutation(T)
        out_of_time = False
        for j in order:
            model = process_column(model, store, int(j), update)
            updates += 1
            if updates % _REORTH_EVERY == 0:
                model = core.reorthonormalize(model)
            if config.max_seconds is not None and \
                    time.perf_counter() - t0 > config.max_seconds:
                out_of_time = True
                break
        if n_pass == 1 and all(e.row is None for e in store.entries):
            raise DegenerateMatrix("no column has enough observed entries")
        rmse = rmse_2d_store(model, store)
        history.append(rmse)
        log.records.append(LogRecord(index=n_pass, seconds=time.perf_counter() - t0,
                                     rmse_2d=rmse, n_cols=model.n_cols, n_rows=model.n))
        if out_of_time:
            break
        if config.target_rmse is not None and rmse <= config.target_rmse:
            break
        if config.max_passes is not None and n_pass >= config.max_passes:
            break
        if converged_by_rel_drop(history, config.rel_drop, config.window):
            break
    return model, log


@dataclass
class Frame:
    """One video frame's observations as ``(track_id, u, v)`` triples."""

    frame_id: int
    observations: list

    def track_ids(self):
        return [obs[0] for obs in self.observations]


@dataclass
class OnlineConfig:
    """Configuration of a streaming run."""

    rank: int = 4
    algorithm: str = "sage"
    iterations_per_frame: int = 0
    seed: int | None = 0
    min_observed: int | None = None
    store_capacity: int | None = None
    snapshot_every: int | None = None

    def __post_init__(self):
        if self.iterations_per_frame < 0:
            raise ValueError("iterations_per_frame must be >= 0")


def run_online(frames, config: OnlineConfig | None = None,
               model: FactorModel | None = None):
    """Stream frames through the factorization.

    Per frame: unseen track ids extend the model by new rows, the frame's two
    columns (x first, then y) are processed, and then ``iterations_per_frame``
    revisits are drawn uniformly over all columns seen so far (seeded).

    Returns ``(model, RunLog)`` with one record per frame.
    """
    config = config or OnlineConfig()
    variant, update = algorithm_config(config.algorithm, config.min_observed)
    rng = np.random.default_rng(config.seed)
    store = ColumnStore(capacity=config.store_capacity)
    track_rows: dict[int, int] = {}
    log = RunLog()
    t0 = time.perf_counter()
    next_col_id = 0
    updates = 0
    for f_idx, frame in enumerate(frames):
        ids = frame.track_ids()
        if len(set(ids)) != len(ids):
            raise StreamError(f"frame {frame.frame_id} repeats a track id")
        new_ids = [tid for tid in ids if tid not in track_rows]
        if model is None:
            if len(ids) < config.rank:
                raise StreamError(
                    f"first frame has {len(ids)} tracks; need at least rank={config.rank}")
            for tid in new_ids:
                track_rows[tid] = len(track_rows)
            model = core.random_init(len(track_rows), config.rank, variant,
                                     seed=rng.integers(2 ** 63))
        elif new_ids:
            for tid in new_ids:
                track_rows[tid] = len(track_rows)
            model = add_rows(model, len(new_ids))
        if frame.observations:
            rows = np.array([track_rows[tid] for tid in ids], dtype=np.intp)
            order = np.argsort(rows)
            us = np.array([obs[1] for obs in frame.observations], dtype=np.float64)
            vs = np.array([obs[2] for obs in frame.observations], dtype=np.float64)
            for coord, vals in ((0, us), (1, vs)):
                col = ObservedColumn(omega=rows[order], values=vals[order],
                                     column_id=next_col_id, frame_id=frame.frame_id)
                next_col_id += 1
                model = process_column(model, store, col, update)
                updates += 1
        for _ in range(config.iterations_per_frame):
            if len(store) == 0:
                break
            t = int(rng.integers(len(store)))
            model = process_column(model, store, t, update)
            updates += 1
            if updates % _REORTH_EVERY == 0:
                model = core.reorthonormalize(model)
        seconds = time.perf_counter() - t0
        rmse = rmse_2d_store(model, store) if any(
            e.row is not None for e in store.entries) else float("nan")
        log.records.append(LogRecord(index=f_idx + 1, seconds=seconds,
                                     rmse_2d=rmse, n_cols=model.n_cols,
                                     n_rows=model.n))
        if config.snapshot_every and (f_idx + 1) % config.snapshot_every == 0:
            log.snapshots[f_idx + 1] = model.copy()
    if model is None:
        raise StreamError("stream contained no frames")
    return model, log


def stream_from_matrix(M: MeasurementMatrix) -> list:
    """Turn a measurement matrix into per-frame observation lists, using row
    indices as track ids."""
    frames = []
    for f in range(M.n_frames):
        rows = np.flatnonzero(M.mask[:, 2 * f] & M.mask[:, 2 * f + 1])
        obs = [(int(i), float(M.values[i, 2 * f]), float(M.values[i, 2 * f + 1]))
               for i in rows]
        frames.append(Frame(frame_id=f, observations=obs))
    return frames
