"""
=============================================================================
Run Artifact Storage
=============================================================================

Binary dataset and model files plus the CSV tables every command writes.

Dataset file (dataset.trrd):
----------------------------
    "TRRD" | u32 version | u32 M, N, n_train, n_val, n_test (pair counts)
    Phi (M x N) | per pair: y (M) then x (N), train, val, test in order
    u32 CRC32 of everything before it

Model file (utrr_k{K}.bin):
---------------------------
    "UTRR" | u32 version | u32 M, N, L, K_last, layer mode (0 = RCC)
    Phi (M x N) | A(t) (M x 2N) for every layer | (rho, alpha) per layer
    u32 CRC32 of everything before it

All integers are little-endian u32, all arrays row-major little-endian f64.

Author: TRR Workbench Team
=============================================================================
"""

import csv
import logging
import struct
import zlib
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .exceptions import FormatError
from .sensing import Dataset, MeasurementMatrix
from .utrr_network import UtrrLayer, UtrrParams


logger = logging.getLogger(__name__)


FORMAT_VERSION = 1
DATASET_MAGIC = b"TRRD"
MODEL_MAGIC = b"UTRR"
DATASET_FILE = "dataset.trrd"
CONFIG_FILE = "config.conf"
LOG_FILE = "run.log"

LAYER_MODE_RCC = 0
LAYER_MODE_ALL = 1

_F64 = np.dtype("<f8")
_HEADER = struct.Struct("<6I")
_CRC = struct.Struct("<I")

RESULT_COLUMNS = ["run_id", "method", "snr_db", "k_param", "sample_id", "nmse_db_or_error", "wall_ms"]
TRACE_COLUMNS = ["iteration", "objective", "error", "l2_norm"]
HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "learning_rate", "stage", "is_best"]
ACCURACY_COLUMNS = ["run_id", "method", "k_param", "threshold", "ratio"]
SUM_RATE_COLUMNS = ["run_id", "method", "snr_dl_db", "sum_rate"]


def model_filename(top_k: int) -> str:
    return f"utrr_k{top_k}.bin"


# =============================================================================
# FRAMING
# =============================================================================

def _seal(payload: bytes) -> bytes:
    return payload + _CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF)


def _unseal(path: Path, magic: bytes) -> Tuple[Tuple[int, ...], memoryview]:
    """Check magic, CRC and version; returns the five dims and the body."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}")

    if len(blob) < len(magic) + _HEADER.size + _CRC.size:
        raise FormatError(f"{path}: truncated file ({len(blob)} bytes)")
    if blob[:len(magic)] != magic:
        raise FormatError(f"{path}: bad magic {blob[:len(magic)]!r}, expected {magic!r}")

    payload, (stored_crc,) = blob[:-_CRC.size], _CRC.unpack(blob[-_CRC.size:])
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise FormatError(f"{path}: CRC32 mismatch")

    version, *dims = _HEADER.unpack_from(payload, len(magic))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    return tuple(dims), memoryview(payload)[len(magic) + _HEADER.size:]


class _Reader:
    """Sequential f64 reader over a checked body."""

    def __init__(self, path, body: memoryview):
        self.path = path
        self.body = body
        self.offset = 0

    def take(self, *shape: int) -> np.ndarray:
        count = int(np.prod(shape))
        if count == 0:
            return np.zeros(shape)
        end = self.offset + count * _F64.itemsize
        if end > len(self.body):
            raise FormatError(f"{self.path}: truncated body")
        values = np.frombuffer(self.body, dtype=_F64, count=count, offset=self.offset)
        self.offset = end
        return values.reshape(shape).astype(float)

    def finish(self):
        if self.offset != len(self.body):
            raise FormatError(f"{self.path}: {len(self.body) - self.offset} trailing bytes")


# =============================================================================
# DATASET FILES
# =============================================================================

def write_dataset(path, train: Dataset, val: Dataset, test: Dataset) -> Path:
    phi = train.phi_ref
    header = DATASET_MAGIC + _HEADER.pack(
        FORMAT_VERSION, phi.m_rows, phi.n_cols, train.n_pairs, val.n_pairs, test.n_pairs
    )
    chunks = [header, np.ascontiguousarray(phi.entries, dtype=_F64).tobytes()]
    for split in (train, val, test):
        rows = np.hstack([split.measurements, split.labels])
        chunks.append(np.ascontiguousarray(rows, dtype=_F64).tobytes())

    path = Path(path)
    path.write_bytes(_seal(b"".join(chunks)))
    logger.info(f"[DATA] wrote {path} ({train.n_pairs}/{val.n_pairs}/{test.n_pairs} pairs)")
    return path


def read_dataset(path, snr_db=None) -> Tuple[Dataset, Dataset, Dataset]:
    """The file does not carry the SNR; pass it from the run's config snapshot."""
    (m, n, *counts), body = _unseal(path, DATASET_MAGIC)
    reader = _Reader(path, body)
    phi = MeasurementMatrix(entries=reader.take(m, n))

    splits = []
    for split, count in zip(("train", "val", "test"), counts):
        rows = reader.take(count, m + n)
        splits.append(Dataset(rows[:, :m].copy(), rows[:, m:].copy(), phi, snr_db, split))
    reader.finish()
    return tuple(splits)


# =============================================================================
# MODEL FILES
# =============================================================================

def write_model(path, params: UtrrParams) -> Path:
    mode = LAYER_MODE_RCC if params.rcc else LAYER_MODE_ALL
    header = MODEL_MAGIC + _HEADER.pack(
        FORMAT_VERSION, params.m_rows, params.n_cols, params.n_layers, params.top_k_last, mode
    )
    chunks = [header, np.ascontiguousarray(params.phi_init.entries, dtype=_F64).tobytes()]
    chunks.extend(np.ascontiguousarray(layer.a_matrix, dtype=_F64).tobytes() for layer in params.layers)
    scalars = np.array([(layer.rho, layer.alpha) for layer in params.layers], dtype=_F64)
    chunks.append(scalars.tobytes())

    path = Path(path)
    path.write_bytes(_seal(b"".join(chunks)))
    return path


def read_model(path) -> UtrrParams:
    (m, n, n_layers, top_k, mode), body = _unseal(path, MODEL_MAGIC)
    if mode not in (LAYER_MODE_RCC, LAYER_MODE_ALL):
        raise FormatError(f"{path}: unknown layer mode {mode}")
    if n_layers < 1:
        raise FormatError(f"{path}: model has no layers")

    reader = _Reader(path, body)
    phi = MeasurementMatrix(entries=reader.take(m, n))
    a_matrices = [reader.take(m, 2 * n) for _ in range(n_layers)]
    scalars = reader.take(n_layers, 2)
    reader.finish()

    layers = tuple(
        UtrrLayer(a_matrix=a, rho=float(rho), alpha=float(alpha))
        for a, (rho, alpha) in zip(a_matrices, scalars)
    )
    return UtrrParams(layers=layers, top_k_last=top_k, phi_init=phi, rcc=mode == LAYER_MODE_RCC)


def load_models(models_dir) -> List[UtrrParams]:
    """Every utrr_k*.bin in a directory, ordered by K."""
    paths = sorted(Path(models_dir).glob("utrr_k*.bin"), key=lambda p: int(p.stem[len("utrr_k"):]))
    if not paths:
        raise FormatError(f"no model files in {models_dir}")
    return [read_model(p) for p in paths]


# =============================================================================
# CSV TABLES
# =============================================================================

def write_csv(path, columns: Sequence[str], rows: Iterable[Dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_csv(path) -> List[Dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def trace_rows(report) -> List[Dict]:
    rows = []
    for i, (value, norm) in enumerate(zip(report.objective_trace, report.norm_trace)):
        rows.append({
            "iteration": i,
            "objective": value,
            "error": "" if report.error_trace is None else report.error_trace[i],
            "l2_norm": norm,
        })
    return rows


def history_rows(history) -> List[Dict]:
    return [
        {
            "epoch": epoch,
            "train_loss": history.train_loss[epoch],
            "val_loss": history.val_loss[epoch],
            "learning_rate": history.learning_rate[epoch],
            "stage": history.stage[epoch],
            "is_best": int(epoch == history.best_epoch),
        }
        for epoch in range(history.epochs_run)
    ]
