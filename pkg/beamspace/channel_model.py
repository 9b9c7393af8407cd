"""
=============================================================================
Channel Model
=============================================================================

Saleh-Valenzuela spatial channels for an N-element half-wavelength uniform
linear array, their DFT beamspace representation, and the normalized /
exact-sparse samples the solvers are tested on.

Functions Overview:
-------------------
- steering_vector     : Array response at one spatial direction
- sample_paths        : Draw angles and complex gains for N_p paths
- synthesize_channel  : Superpose the paths into a spatial channel
- dft_matrix          : Unitary DFT built from orthogonal steering vectors
- to_beamspace        : Spatial channel -> beamspace channel
- normalize_channel   : Unit-norm beamspace channel
- sparsify_top        : Keep the S largest-magnitude beamspace entries

All randomness comes from an explicit numpy Generator.

Author: TRR Workbench Team
=============================================================================
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DegenerateInputError,
    DimensionMismatchError,
    InvalidDimensionError,
)


# Paths per channel when the config does not say (one LoS + two NLoS)
DEFAULT_N_PATHS = 3


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class PathSet:
    """
    Propagation paths of one user.

    directions[l] = sin(angles[l]) / 2 because the antenna spacing is fixed
    at half a wavelength.
    """

    gains: np.ndarray
    directions: np.ndarray
    angles: np.ndarray

    @property
    def n_paths(self) -> int:
        return int(self.gains.shape[0])


@dataclass(frozen=True)
class SpatialChannel:
    entries: np.ndarray

    @property
    def n_antennas(self) -> int:
        return int(self.entries.shape[0])


@dataclass(frozen=True)
class BeamspaceChannel:
    entries: np.ndarray

    @property
    def n_antennas(self) -> int:
        return int(self.entries.shape[0])


@dataclass(frozen=True)
class DftMatrix:
    entries: np.ndarray

    @property
    def n_antennas(self) -> int:
        return int(self.entries.shape[0])


# =============================================================================
# ARRAY RESPONSE
# =============================================================================

def steering_vector(direction: float, n_antennas: int) -> np.ndarray:
    """Entry m is exp(-j*2*pi*direction*m) / sqrt(N), m = 0..N-1."""
    if n_antennas < 1:
        raise InvalidDimensionError(f"n_antennas must be >= 1, got {n_antennas}")
    m = np.arange(n_antennas)
    return np.exp(-2j * np.pi * direction * m) / np.sqrt(n_antennas)


def _steering_matrix(directions: np.ndarray, n_antennas: int) -> np.ndarray:
    # N x len(directions), one steering vector per column
    m = np.arange(n_antennas)[:, None]
    return np.exp(-2j * np.pi * m * directions[None, :]) / np.sqrt(n_antennas)


# =============================================================================
# CHANNEL GENERATION
# =============================================================================

def sample_paths(n_paths: int, rng: np.random.Generator) -> PathSet:
    """
    Draw N_p paths: angles uniform on [-pi/2, pi/2], gains standard
    complex Gaussian (the LoS path included).

    Draw order is fixed (angles, then real parts, then imaginary parts) so a
    seeded generator reproduces the same PathSet bit for bit.
    """
    if n_paths < 1:
        raise InvalidDimensionError(f"n_paths must be >= 1, got {n_paths}")

    angles = rng.uniform(-np.pi / 2, np.pi / 2, size=n_paths)
    real = rng.standard_normal(n_paths)
    imag = rng.standard_normal(n_paths)
    gains = (real + 1j * imag) / np.sqrt(2.0)

    return PathSet(gains=gains, directions=np.sin(angles) / 2.0, angles=angles)


def synthesize_channel(paths: PathSet, n_antennas: int) -> SpatialChannel:
    """h = sqrt(N / N_p) * sum_l gain_l * steering_vector(direction_l)."""
    if n_antennas < 1:
        raise InvalidDimensionError(f"n_antennas must be >= 1, got {n_antennas}")
    steering = _steering_matrix(paths.directions, n_antennas)
    scale = np.sqrt(n_antennas / paths.n_paths)
    return SpatialChannel(entries=scale * (steering @ paths.gains))


# =============================================================================
# BEAMSPACE TRANSFORM
# =============================================================================

def dft_matrix(n_antennas: int) -> DftMatrix:
    """
    Row i (1-based) is the conjugated steering vector at
    phi_i = (i - (N + 1) / 2) / N.
    """
    if n_antennas < 1:
        raise InvalidDimensionError(f"n_antennas must be >= 1, got {n_antennas}")
    grid = (np.arange(1, n_antennas + 1) - (n_antennas + 1) / 2.0) / n_antennas
    return DftMatrix(entries=_steering_matrix(grid, n_antennas).conj().T)


def to_beamspace(h: SpatialChannel, dft: DftMatrix) -> BeamspaceChannel:
    if h.n_antennas != dft.n_antennas:
        raise DimensionMismatchError(
            f"channel has {h.n_antennas} antennas, DFT matrix expects {dft.n_antennas}"
        )
    return BeamspaceChannel(entries=dft.entries @ h.entries)


def normalize_channel(h_b: BeamspaceChannel) -> BeamspaceChannel:
    norm = np.linalg.norm(h_b.entries)
    if norm == 0:
        raise DegenerateInputError("cannot normalize a zero beamspace channel")
    return BeamspaceChannel(entries=h_b.entries / norm)


def top_indices(values: np.ndarray, count: int) -> np.ndarray:
    """
    Indices of the `count` largest-magnitude entries.

    Ties go to the lowest index (stable sort on negated magnitudes). The
    solvers share this helper so objective, gradient and trim agree.
    """
    return np.argsort(-np.abs(values), kind="stable")[:count]


def sparsify_top(h_b: BeamspaceChannel, n_keep: int) -> BeamspaceChannel:
    """Zero everything but the n_keep largest-magnitude entries."""
    if not 0 <= n_keep <= h_b.n_antennas:
        raise InvalidDimensionError(
            f"n_keep must lie in [0, {h_b.n_antennas}], got {n_keep}"
        )
    kept = np.zeros_like(h_b.entries)
    idx = top_indices(h_b.entries, n_keep)
    kept[idx] = h_b.entries[idx]
    return BeamspaceChannel(entries=kept)


def generate_beamspace_channel(
    n_antennas: int,
    n_paths: int,
    rng: np.random.Generator,
    sparsity: int = 0,
    dft: DftMatrix = None,
) -> BeamspaceChannel:
    """
    One unit-norm beamspace sample, the way datasets are built.

    With sparsity > 0 the channel is cut to its `sparsity` strongest beams
    and renormalized, giving the exact-sparse samples.
    """
    dft = dft if dft is not None else dft_matrix(n_antennas)
    paths = sample_paths(n_paths, rng)
    h_b = normalize_channel(to_beamspace(synthesize_channel(paths, n_antennas), dft))
    if sparsity > 0:
        h_b = normalize_channel(sparsify_top(h_b, sparsity))
    return h_b
