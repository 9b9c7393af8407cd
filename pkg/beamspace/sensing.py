"""
=============================================================================
Sensing
=============================================================================

Bernoulli measurement matrices, noisy pilot observations at a target SNR,
the split of one complex system into two real ones, and the supervised
datasets used for training and evaluation.

Seed hierarchy:
---------------
Every random draw is made from `np.random.default_rng([seed, stream, ...])`,
a counter-based derivation from the master seed. The measurement matrix has
its own stream, each split has its own stream, and inside a split every
sample owns two sub-streams (channel, noise). Generation order and thread
count therefore never change the result.

Author: TRR Workbench Team
=============================================================================
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .channel_model import BeamspaceChannel, dft_matrix, generate_beamspace_channel
from .exceptions import DimensionMismatchError, InvalidDimensionError
from .parallel import parallel_map


logger = logging.getLogger(__name__)


# Sentinel accepted wherever an SNR in dB is expected
NOISELESS = "noiseless"

PHI_STREAM = 0
SPLIT_STREAMS = {"train": 1, "val": 2, "test": 3}
CHANNEL_SUBSTREAM = 0
NOISE_SUBSTREAM = 1
SWEEP_NOISE_SUBSTREAM = 2


def is_noiseless(snr_db) -> bool:
    return snr_db is None or snr_db == NOISELESS


def sample_rng(seed: int, *counters: int) -> np.random.Generator:
    """Generator for one position in the seed hierarchy."""
    return np.random.default_rng([int(seed), *(int(c) for c in counters)])


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class MeasurementMatrix:
    """Real M x N matrix with entries exactly +-1/sqrt(M)."""

    entries: np.ndarray

    @property
    def m_rows(self) -> int:
        return int(self.entries.shape[0])

    @property
    def n_cols(self) -> int:
        return int(self.entries.shape[1])


@dataclass(frozen=True)
class ComplexObservation:
    measurements: np.ndarray
    snr_db: Optional[float]
    noise_var: float


@dataclass(frozen=True)
class RealPair:
    measurement: np.ndarray
    label: np.ndarray
    part: str  # "real" | "imag"


@dataclass(frozen=True)
class Dataset:
    """
    One split of supervised samples.

    Rows alternate real/imag parts of consecutive channels: rows 2c and
    2c + 1 belong to channel c.
    """

    measurements: np.ndarray  # n_pairs x M
    labels: np.ndarray  # n_pairs x N
    phi_ref: MeasurementMatrix
    snr_db: Optional[float]
    split: str

    def __post_init__(self):
        if self.measurements.shape[0] != self.labels.shape[0]:
            raise DimensionMismatchError("measurements and labels differ in sample count")
        if self.measurements.shape[1:] != (self.phi_ref.m_rows,) or \
                self.labels.shape[1:] != (self.phi_ref.n_cols,):
            raise DimensionMismatchError("dataset rows do not match the measurement matrix")

    @property
    def n_pairs(self) -> int:
        return int(self.measurements.shape[0])

    @property
    def n_channels(self) -> int:
        return self.n_pairs // 2

    @property
    def pairs(self) -> Tuple[RealPair, ...]:
        return tuple(
            RealPair(
                measurement=self.measurements[i],
                label=self.labels[i],
                part="real" if i % 2 == 0 else "imag",
            )
            for i in range(self.n_pairs)
        )

    def complex_labels(self) -> np.ndarray:
        """n_channels x N complex beamspace channels."""
        return merge_rows(self.labels)

    @classmethod
    def from_pairs(cls, pairs: Sequence[RealPair], phi_ref, snr_db, split):
        m, n = phi_ref.m_rows, phi_ref.n_cols
        measurements = np.array([p.measurement for p in pairs], dtype=float).reshape(-1, m)
        labels = np.array([p.label for p in pairs], dtype=float).reshape(-1, n)
        return cls(measurements, labels, phi_ref, snr_db, split)


# =============================================================================
# MEASUREMENT MATRIX
# =============================================================================

def bernoulli_matrix(m_rows: int, n_cols: int, rng: np.random.Generator) -> MeasurementMatrix:
    if m_rows < 1 or n_cols < 1:
        raise InvalidDimensionError(f"matrix shape must be positive, got {m_rows}x{n_cols}")
    scale = 1.0 / np.sqrt(m_rows)
    signs = rng.integers(0, 2, size=(m_rows, n_cols))
    return MeasurementMatrix(entries=np.where(signs == 1, scale, -scale))


# =============================================================================
# OBSERVATIONS
# =============================================================================

def observe(phi: MeasurementMatrix, h_b: BeamspaceChannel, snr_db, rng: np.random.Generator) -> ComplexObservation:
    """
    z = Phi h_b + n with per-entry complex noise variance
    ||Phi h_b||^2 / (M * 10^(snr_db / 10)); the sentinel "noiseless" (or
    None) gives n = 0 and draws nothing from rng.
    """
    if h_b.n_antennas != phi.n_cols:
        raise DimensionMismatchError(
            f"channel length {h_b.n_antennas} does not match Phi with {phi.n_cols} columns"
        )

    clean = phi.entries @ h_b.entries
    if is_noiseless(snr_db):
        return ComplexObservation(measurements=clean, snr_db=None, noise_var=0.0)

    snr_linear = 10.0 ** (float(snr_db) / 10.0)
    noise_var = float(np.vdot(clean, clean).real) / (phi.m_rows * snr_linear)

    # Each real system gets half of the circularly-symmetric noise power
    std = np.sqrt(noise_var / 2.0)
    noise = std * rng.standard_normal(phi.m_rows) + 1j * std * rng.standard_normal(phi.m_rows)

    return ComplexObservation(measurements=clean + noise, snr_db=float(snr_db), noise_var=noise_var)


def split_real(z: ComplexObservation, h_b: BeamspaceChannel) -> Tuple[RealPair, RealPair]:
    real = RealPair(
        measurement=np.ascontiguousarray(z.measurements.real),
        label=np.ascontiguousarray(h_b.entries.real),
        part="real",
    )
    imag = RealPair(
        measurement=np.ascontiguousarray(z.measurements.imag),
        label=np.ascontiguousarray(h_b.entries.imag),
        part="imag",
    )
    return real, imag


def merge_complex(x_re: np.ndarray, x_im: np.ndarray) -> BeamspaceChannel:
    x_re = np.asarray(x_re, dtype=float)
    x_im = np.asarray(x_im, dtype=float)
    if x_re.shape != x_im.shape:
        raise DimensionMismatchError(f"real part {x_re.shape} and imag part {x_im.shape} differ")
    merged = np.empty(x_re.shape, dtype=complex)
    merged.real = x_re
    merged.imag = x_im
    return BeamspaceChannel(entries=merged)


def merge_rows(rows: np.ndarray) -> np.ndarray:
    """Stacked (real, imag) rows -> one complex row per channel."""
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] % 2:
        raise DimensionMismatchError("real/imag rows must come in pairs")
    return merge_complex(rows[0::2], rows[1::2]).entries


# =============================================================================
# DATASETS
# =============================================================================

def measurement_matrix_for(cfg, seed: int) -> MeasurementMatrix:
    return bernoulli_matrix(cfg.n_measurements, cfg.n_antennas, sample_rng(seed, PHI_STREAM))


def generate_split_channels(cfg, seed: int, split: str, count: int, threads: int = 1):
    """Unit-norm beamspace channels of one split, in sample order."""
    stream = SPLIT_STREAMS[split]
    dft = dft_matrix(cfg.n_antennas)

    def make(index):
        rng = sample_rng(seed, stream, index, CHANNEL_SUBSTREAM)
        return generate_beamspace_channel(cfg.n_antennas, cfg.n_paths, rng, cfg.sparsity, dft)

    return parallel_map(make, range(count), threads)


def observe_split(phi, channels, snr_db, seed: int, split: str, noise_counters=(NOISE_SUBSTREAM,), threads: int = 1) -> Dataset:
    """Observe every channel and split it into its two real pairs."""
    stream = SPLIT_STREAMS[split]

    def make(item):
        index, h_b = item
        rng = sample_rng(seed, stream, index, *noise_counters)
        return split_real(observe(phi, h_b, snr_db, rng), h_b)

    pairs = [p for both in parallel_map(make, list(enumerate(channels)), threads) for p in both]
    return Dataset.from_pairs(pairs, phi, None if is_noiseless(snr_db) else float(snr_db), split)


def build_dataset(cfg, seed: int, threads: int = 1) -> Tuple[Dataset, Dataset, Dataset]:
    """
    Train/val/test datasets as a pure function of (config, master seed).

    Noise is baked into the stored measurements; it is not redrawn per epoch.
    """
    phi = measurement_matrix_for(cfg, seed)
    splits = []
    for split, count in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        channels = generate_split_channels(cfg, seed, split, count, threads)
        splits.append(observe_split(phi, channels, cfg.snr_db, seed, split, threads=threads))
        logger.info(f"[DATA] {split}: {count} channels -> {2 * count} real pairs")
    return tuple(splits)
