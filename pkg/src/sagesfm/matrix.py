"""Partially observed measurement matrices and input validation helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ObservedColumn
from .errors import InvalidDimension, NumericalFault


@dataclass
class MeasurementMatrix:
    """An n x 2m matrix of stacked 2D track coordinates plus its mask.

    ``values`` entries outside the mask are ignored everywhere; ``mask`` is a
    boolean array of the same shape, True where observed.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise InvalidDimension("values and mask must be 2-d arrays of equal shape")
        if not np.all(np.isfinite(self.values[self.mask])):
            raise NumericalFault("observed entries must be finite")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1] // 2

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def missing_fraction(self) -> float:
        return 1.0 - self.mask.mean()

    def column(self, j: int, frame_id: int | None = None) -> ObservedColumn:
        omega = np.flatnonzero(self.mask[:, j])
        return ObservedColumn(omega=omega, values=self.values[omega, j],
                              column_id=j, frame_id=j // 2 if frame_id is None else frame_id)

    def columns(self):
        for j in range(self.n_cols):
            yield self.column(j)

    def to_dense_nan(self) -> np.ndarray:
        out = np.where(self.mask, self.values, np.nan)
        return out

    @classmethod
    def from_dense(cls, arr: np.ndarray) -> "MeasurementMatrix":
        """Build from a dense array where NaN marks missing entries."""
        arr = np.asarray(arr, dtype=np.float64)
        mask = np.isfinite(arr)
        return cls(values=np.where(mask, arr, 0.0), mask=mask)

    def copy(self) -> "MeasurementMatrix":
        return MeasurementMatrix(self.values.copy(), self.mask.copy())


def as_measurement_matrix(X) -> MeasurementMatrix:
    """Coerce user input (MeasurementMatrix, NaN-masked array, or a
    ``(values, mask)`` pair) into a MeasurementMatrix."""
    if isinstance(X, MeasurementMatrix):
        return X
    if isinstance(X, tuple) and len(X) == 2:
        return MeasurementMatrix(values=np.asarray(X[0]), mask=np.asarray(X[1]))
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidDimension("expected a 2-d matrix")
    return MeasurementMatrix.from_dense(arr)


def rmse_observed(estimate: np.ndarray, M: MeasurementMatrix) -> float:
    """Root-mean-square error of an estimate over the observed entries."""
    diff = np.where(M.mask, estimate - M.values, 0.0)
    n_obs = M.n_observed
    if n_obs == 0:
        raise InvalidDimension("matrix has no observed entries")
    return float(np.sqrt((diff ** 2).sum() / n_obs))
