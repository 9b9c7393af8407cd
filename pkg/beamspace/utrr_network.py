"""
=============================================================================
Unfolded Trimmed-Ridge Regression (UTRR) Network
=============================================================================

Each ITRR iteration becomes one layer with its own trainable decoder matrix
A(t), regularization weight rho(t) and step size alpha(t).

Forward pass (rows of Y are samples):
-------------------------------------
    x0   = Phi^T y                         (initializing layer, Phi frozen)
    z0   = [(x0)_+; (-x0)_+]
    g    = A(t)^T (A(t) z - y) + rho(t) (z - trim_K(z))
    w    = ReLU(z - alpha(t) g)
    z'   = (w + z) / 2                     (residual unit, beta = 1/2)
    x^   = first half of z(L) - second half of z(L)

With RCC (reduced computational complexity) only the last layer uses the
top-K term; intermediate layers run with K = 0.

Backward pass:
--------------
Exact reverse-mode derivatives of the batch-mean squared error, written out
by hand. The ReLU subgradient at exactly zero is 0 and the top-K mask is
frozen at its forward value, which is exact away from ties.

Author: TRR Workbench Team
=============================================================================
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    EmptyBatchError,
    EmptyEnsembleError,
    InvalidDimensionError,
    TopKRangeError,
    TraceMismatchError,
    TrainingDivergedError,
)
from .parallel import parallel_map
from .sensing import MeasurementMatrix
from .trr_solvers import lift, lift_matrix, unlift


logger = logging.getLogger(__name__)


INIT_RHO = 1.0
INIT_ALPHA = 0.1
MIXING = 0.5

# Learning-rate stages, epoch budget, patience and batch size of the
# full-scale experiments
DEFAULT_LEARNING_RATES = (0.005, 0.001, 0.0005, 0.0002, 0.0001)
DEFAULT_MAX_EPOCHS = 300
DEFAULT_PATIENCE = 10
DEFAULT_BATCH_SIZE = 128


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class UtrrLayer:
    a_matrix: np.ndarray
    rho: float
    alpha: float


@dataclass(frozen=True)
class UtrrParams:
    """
    Trainable layers plus the frozen encoder.

    rcc=False keeps the top-K term in every layer (used to measure what
    RCC saves).
    """

    layers: Tuple[UtrrLayer, ...]
    top_k_last: int
    phi_init: MeasurementMatrix
    rcc: bool = True

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def m_rows(self) -> int:
        return self.phi_init.m_rows

    @property
    def n_cols(self) -> int:
        return self.phi_init.n_cols

    @property
    def parameter_count(self) -> int:
        return sum(layer.a_matrix.size + 2 for layer in self.layers)

    def layer_top_k(self, t: int) -> int:
        if not self.rcc or t == self.n_layers - 1:
            return self.top_k_last
        return 0


@dataclass
class ForwardTrace:
    """Per-layer caches needed by backward; states holds L + 1 entries."""

    y: np.ndarray
    states: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    residuals: List[np.ndarray] = field(default_factory=list)
    gradients: List[np.ndarray] = field(default_factory=list)
    masks: List[Optional[np.ndarray]] = field(default_factory=list)

    @property
    def relu_masks(self) -> List[np.ndarray]:
        return [pre > 0 for pre in self.pre_activations]


@dataclass
class Gradients:
    a_matrices: List[np.ndarray]
    rhos: np.ndarray
    alphas: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    learning_rates: Tuple[float, ...] = DEFAULT_LEARNING_RATES
    max_epochs: int = DEFAULT_MAX_EPOCHS
    patience: int = DEFAULT_PATIENCE
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidDimensionError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise InvalidDimensionError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise InvalidDimensionError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not self.learning_rates:
            raise InvalidDimensionError("at least one learning rate is required")

    def stage_for(self, epoch: int) -> int:
        """Equal epoch budget per learning-rate stage."""
        stages = len(self.learning_rates)
        return min(epoch * stages // self.max_epochs, stages - 1)


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    learning_rate: List[float] = field(default_factory=list)
    stage: List[int] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = -1
    wall_seconds: float = 0.0

    @property
    def best_val_loss(self) -> float:
        return min(self.val_loss)

    @property
    def epochs_run(self) -> int:
        return len(self.val_loss)


# =============================================================================
# INITIALIZATION
# =============================================================================

def init_params(phi: MeasurementMatrix, n_layers: int, top_k: int, rcc: bool = True) -> UtrrParams:
    """Every layer starts at A = [Phi, -Phi], rho = 1.0, alpha = 0.1."""
    if n_layers < 1:
        raise InvalidDimensionError(f"L >= 1 required, got {n_layers}")
    if not 0 <= top_k <= 2 * phi.n_cols:
        raise TopKRangeError(f"top_k must lie in [0, {2 * phi.n_cols}], got {top_k}")

    a_init = lift_matrix(phi)
    layers = tuple(
        UtrrLayer(a_matrix=a_init.copy(), rho=INIT_RHO, alpha=INIT_ALPHA)
        for _ in range(n_layers)
    )
    return UtrrParams(layers=layers, top_k_last=int(top_k), phi_init=phi, rcc=rcc)


# =============================================================================
# FORWARD PASS
# =============================================================================

def _top_k_mask(z: np.ndarray, k: int) -> Optional[np.ndarray]:
    # Same tie rule as trim_top_k: stable sort, lowest index first
    if k == 0:
        return None
    mask = np.zeros(z.shape, dtype=bool)
    if k >= z.shape[1]:
        mask[:] = True
        return mask
    idx = np.argsort(-np.abs(z), axis=1, kind="stable")[:, :k]
    np.put_along_axis(mask, idx, True, axis=1)
    return mask


def _as_batch(values: np.ndarray, width: int, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    batch = np.atleast_2d(values)
    if batch.ndim != 2 or batch.shape[1] != width:
        raise DimensionMismatchError(f"{name} rows must have length {width}, got shape {values.shape}")
    return batch


def forward(params: UtrrParams, y: np.ndarray, keep_trace: bool = True):
    """
    Run the decoder on one measurement vector or a batch of rows.

    Returns (x_hat, trace); x_hat has the same rank as y. With
    keep_trace=False the trace is None and nothing is cached.
    """
    single = np.ndim(y) == 1
    y_batch = _as_batch(y, params.m_rows, "y")

    z = lift(y_batch @ params.phi_init.entries)
    trace = ForwardTrace(y=y_batch) if keep_trace else None
    if trace is not None:
        trace.states.append(z)

    for t, layer in enumerate(params.layers):
        a = layer.a_matrix
        residual = z @ a.T - y_batch
        grad = residual @ a
        mask = _top_k_mask(z, params.layer_top_k(t))
        untrimmed = z if mask is None else np.where(mask, 0.0, z)
        grad = grad + layer.rho * untrimmed

        pre = z - layer.alpha * grad
        z_next = MIXING * (np.maximum(pre, 0.0) + z)

        if trace is not None:
            trace.residuals.append(residual)
            trace.gradients.append(grad)
            trace.masks.append(mask)
            trace.pre_activations.append(pre)
            trace.states.append(z_next)
        z = z_next

    x_hat = unlift(z)
    return (x_hat[0] if single else x_hat), trace


def predict(params: UtrrParams, y: np.ndarray) -> np.ndarray:
    return forward(params, y, keep_trace=False)[0]


def loss(x_hat_batch: np.ndarray, x_batch: np.ndarray) -> float:
    """Mean over the batch of ||x - x_hat||^2."""
    x_hat_batch = np.atleast_2d(np.asarray(x_hat_batch, dtype=float))
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=float))
    if x_hat_batch.shape != x_batch.shape:
        raise DimensionMismatchError(f"prediction {x_hat_batch.shape} and label {x_batch.shape} differ")
    if x_batch.shape[0] == 0:
        raise EmptyBatchError("loss over an empty batch")
    diff = x_batch - x_hat_batch
    return float(np.mean(np.sum(diff * diff, axis=1)))


# =============================================================================
# BACKWARD PASS
# =============================================================================

def backward(params: UtrrParams, trace: ForwardTrace, y: np.ndarray, x_label: np.ndarray) -> Gradients:
    """Gradients of loss(forward(params, y), x_label) for every layer."""
    y_batch = _as_batch(y, params.m_rows, "y")
    x_batch = _as_batch(x_label, params.n_cols, "x_label")
    if trace is None or len(trace.states) != params.n_layers + 1:
        raise TraceMismatchError("trace depth does not match the network")
    if trace.y.shape != y_batch.shape or not np.array_equal(trace.y, y_batch):
        raise TraceMismatchError("trace was produced for different measurements")
    if x_batch.shape[0] != y_batch.shape[0]:
        raise DimensionMismatchError("labels and measurements differ in batch size")

    d_x = 2.0 * (unlift(trace.states[-1]) - x_batch) / x_batch.shape[0]
    d_z = np.concatenate([d_x, -d_x], axis=1)

    n_layers = params.n_layers
    d_a = [None] * n_layers
    d_rho = np.zeros(n_layers)
    d_alpha = np.zeros(n_layers)

    for t in reversed(range(n_layers)):
        layer = params.layers[t]
        a = layer.a_matrix
        z = trace.states[t]
        mask = trace.masks[t]

        # z' = (w + z) / 2, w = ReLU(pre)
        d_pre = np.where(trace.pre_activations[t] > 0, MIXING * d_z, 0.0)
        d_z_prev = MIXING * d_z + d_pre

        # pre = z - alpha g
        d_alpha[t] = -float(np.sum(d_pre * trace.gradients[t]))
        d_g = -layer.alpha * d_pre

        # g = r A + rho (z - trim_K(z)), mask frozen
        untrimmed = z if mask is None else np.where(mask, 0.0, z)
        d_rho[t] = float(np.sum(d_g * untrimmed))
        d_z_prev += layer.rho * (d_g if mask is None else np.where(mask, 0.0, d_g))

        # r = z A^T - y
        d_r = d_g @ a.T
        d_a[t] = trace.residuals[t].T @ d_g + d_r.T @ z
        d_z_prev += d_r @ a

        d_z = d_z_prev

    return Gradients(a_matrices=d_a, rhos=d_rho, alphas=d_alpha)


def sgd_update(params: UtrrParams, grads: Gradients, lr: float) -> UtrrParams:
    """p <- p - lr * g for every trainable scalar; returns new params."""
    if lr < 0:
        raise InvalidDimensionError(f"learning rate must be nonnegative, got {lr}")
    layers = tuple(
        UtrrLayer(
            a_matrix=layer.a_matrix - lr * grads.a_matrices[t],
            rho=layer.rho - lr * float(grads.rhos[t]),
            alpha=layer.alpha - lr * float(grads.alphas[t]),
        )
        for t, layer in enumerate(params.layers)
    )
    return replace(params, layers=layers)


# =============================================================================
# TRAINING
# =============================================================================

def dataset_loss(params: UtrrParams, dataset) -> float:
    return loss(predict(params, dataset.measurements), dataset.labels)


def _epoch_order(n_rows: int, seed: int, epoch: int) -> np.ndarray:
    # Shuffle whole channels so a channel's real and imag rows stay adjacent
    rng = np.random.default_rng([int(seed), int(epoch)])
    if n_rows % 2:
        return rng.permutation(n_rows)
    channels = rng.permutation(n_rows // 2)
    return np.stack([2 * channels, 2 * channels + 1], axis=1).ravel()


def train(params: UtrrParams, train_set, val_set, cfg: TrainConfig) -> Tuple[UtrrParams, TrainHistory]:
    """
    Mini-batch gradient descent with staged learning rates and early
    stopping on validation loss; returns the best-validation parameters.
    """
    if train_set.n_pairs == 0 or val_set.n_pairs == 0:
        raise EmptyBatchError("training needs nonempty train and validation sets")

    history = TrainHistory()
    started = time.perf_counter()

    measurements, labels = train_set.measurements, train_set.labels
    best_params, best_loss = params, np.inf
    since_best = 0

    for epoch in range(cfg.max_epochs):
        stage = cfg.stage_for(epoch)
        lr = float(cfg.learning_rates[stage])
        order = _epoch_order(train_set.n_pairs, cfg.seed, epoch)

        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            x_hat, trace = forward(params, measurements[rows])
            batch_loss = loss(x_hat, labels[rows])
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            if lr > 0:
                grads = backward(params, trace, measurements[rows], labels[rows])
                params = sgd_update(params, grads, lr)
            total += batch_loss * len(rows)

        train_loss = total / len(order)
        val_loss = dataset_loss(params, val_set)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")

        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.learning_rate.append(lr)
        history.stage.append(stage)
        logger.debug(f"[TRAIN] epoch {epoch}: train={train_loss:.6e} val={val_loss:.6e} lr={lr}")

        if val_loss < best_loss:
            best_loss, best_params = val_loss, params
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                history.stopped_early = True
                break

    history.wall_seconds = time.perf_counter() - started
    logger.info(
        f"[TRAIN] K={params.top_k_last} rcc={params.rcc}: {history.epochs_run} epochs, "
        f"best val {best_loss:.6e} at epoch {history.best_epoch}, {history.wall_seconds:.1f}s"
    )
    return best_params, history


# =============================================================================
# MODEL-AVERAGING ENSEMBLE
# =============================================================================

def ensemble_predict(models: Sequence[UtrrParams], y: np.ndarray, threads: int = 1) -> np.ndarray:
    """Arithmetic mean of the per-model reconstructions."""
    if not models:
        raise EmptyEnsembleError("ensemble needs at least one model")
    outputs = parallel_map(lambda model: predict(model, y), models, threads)
    total = outputs[0].copy()
    for out in outputs[1:]:
        total = total + out
    return total / len(outputs)
