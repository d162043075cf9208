"""Observed data container."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class Dataset:
    """Observations ``(X_i, D_i, Y_i)``; ``Z`` is the column subset ``z_cols`` of X.

    Simulated datasets also carry the true propensity and potential outcomes.
    """

    X: np.ndarray
    D: np.ndarray
    Y: np.ndarray
    z_cols: Sequence[int] = (0,)
    columns: Optional[Sequence[str]] = None
    p_true: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.D = np.asarray(self.D, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        n = self.X.shape[0]
        if self.D.shape != (n,) or self.Y.shape != (n,):
            raise ValueError("X, D and Y must have the same number of rows")
        if not np.all((self.D == 0) | (self.D == 1)):
            raise ValueError("treatment must be binary (0/1)")
        self.z_cols = tuple(int(c) for c in self.z_cols)
        if not self.z_cols or max(self.z_cols) >= self.X.shape[1] or min(self.z_cols) < 0:
            raise ValueError(f"z_cols {self.z_cols} out of range for {self.X.shape[1]} covariates")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def k(self):
        return self.X.shape[1]

    @property
    def l(self):
        return len(self.z_cols)

    @property
    def Z(self):
        return self.X[:, list(self.z_cols)]
