"""
=============================================================================
Metrics
=============================================================================

Channel-estimation accuracy (NMSE, normalized squared error, accurate
reconstruction ratio) and link-level evaluation (zero-forcing precoding,
downlink sum rate).

Author: TRR Workbench Team
=============================================================================
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import (
    DegenerateInputError,
    DimensionMismatchError,
    EmptyBatchError,
    IllConditionedError,
    InvalidDimensionError,
)


# Reported instead of -inf for exact reconstructions
NMSE_FLOOR_DB = -300.0

GRAM_CONDITION_LIMIT = 1e12


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class MultiUserChannel:
    """N x U matrix, one beamspace channel per column."""

    columns: np.ndarray

    @property
    def n_users(self) -> int:
        return int(self.columns.shape[1])

    @classmethod
    def from_rows(cls, rows: np.ndarray):
        """One channel per row (dataset layout) -> one per column."""
        return cls(columns=np.ascontiguousarray(np.asarray(rows).T))


@dataclass(frozen=True)
class Precoder:
    """Frobenius-normalized ZF precoder, one column per user."""

    columns: np.ndarray
    frobenius_norm_of_unnormalized: float


# =============================================================================
# ESTIMATION ERROR
# =============================================================================

def _per_sample_errors(truth: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    truth = np.atleast_2d(np.asarray(truth))
    estimate = np.atleast_2d(np.asarray(estimate))
    if truth.shape != estimate.shape:
        raise DimensionMismatchError(f"truth {truth.shape} and estimate {estimate.shape} differ")
    if truth.shape[0] == 0:
        raise EmptyBatchError("no samples to compare")

    energy = np.sum(np.abs(truth) ** 2, axis=1)
    if np.any(energy == 0):
        raise DegenerateInputError("a truth sample has zero norm")
    return np.sum(np.abs(truth - estimate) ** 2, axis=1) / energy


def normalized_sq_error(x: np.ndarray, x_hat: np.ndarray) -> float:
    """||x - x_hat||^2 / ||x||^2."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise DimensionMismatchError("normalized_sq_error compares two vectors")
    return float(_per_sample_errors(x, x_hat)[0])


def per_sample_errors(truth: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    return _per_sample_errors(truth, estimate)


def to_db(value: float) -> float:
    if value <= 0:
        return NMSE_FLOOR_DB
    return max(10.0 * float(np.log10(value)), NMSE_FLOOR_DB)


def nmse_db(truth: np.ndarray, estimate: np.ndarray) -> float:
    """10 log10 of the mean per-sample normalized squared error."""
    return to_db(float(np.mean(_per_sample_errors(truth, estimate))))


def accurate_ratio(errors: Sequence[float], threshold: float) -> float:
    """Fraction of samples whose error is strictly below threshold."""
    errors = np.asarray(list(errors), dtype=float)
    if errors.size == 0:
        raise EmptyBatchError("accurate_ratio needs at least one error")
    if threshold <= 0:
        raise InvalidDimensionError(f"threshold must be positive, got {threshold}")
    return float(np.count_nonzero(errors < threshold)) / errors.size


# =============================================================================
# ZERO-FORCING PRECODING & SUM RATE
# =============================================================================

def zf_precoder(h_est: MultiUserChannel) -> Precoder:
    """
    F~ = H (H^H H)^-1, then every column divided by ||F~||_F so the total
    transmit power is one.
    """
    h = np.asarray(h_est.columns, dtype=complex)
    n_antennas, n_users = h.shape
    if n_antennas < n_users:
        raise DimensionMismatchError(f"ZF needs N >= U, got N={n_antennas}, U={n_users}")

    gram = h.conj().T @ h
    if np.linalg.cond(gram) >= GRAM_CONDITION_LIMIT:
        raise IllConditionedError("estimated channel Gram matrix is too ill-conditioned for ZF")

    unnormalized = h @ np.linalg.solve(gram, np.eye(n_users))
    norm = float(np.linalg.norm(unnormalized, "fro"))
    return Precoder(columns=unnormalized / norm, frobenius_norm_of_unnormalized=norm)


def sum_rate(h_true: MultiUserChannel, precoder: Precoder, snr_dl_db: float) -> float:
    """
    sum_u log2(1 + |h_u^H f_u|^2 / (sum_{i != u} |h_u^H f_i|^2 + 1/SNR_dl)).
    """
    h = np.asarray(h_true.columns)
    f = np.asarray(precoder.columns)
    if h.shape != f.shape:
        raise DimensionMismatchError(f"channels {h.shape} and precoder {f.shape} differ")

    gains = np.abs(h.conj().T @ f) ** 2  # gains[u, i] = |h_u^H f_i|^2
    signal = np.diag(gains).copy()
    np.fill_diagonal(gains, 0.0)
    interference = gains.sum(axis=1)
    noise = 1.0 / (10.0 ** (snr_dl_db / 10.0))
    return float(np.sum(np.log2(1.0 + signal / (interference + noise))))
