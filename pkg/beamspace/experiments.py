"""
=============================================================================
Experiment Orchestration
=============================================================================

The five workbench operations behind the management commands. Each one
opens a run (artifact directory, config snapshot, run.log, registry row),
does its work and leaves CSV tables behind.

Operations:
-----------
- gen_data  : Build train/val/test datasets and write dataset.trrd
- solve     : Run one iterative estimator over the test split
- train     : Train one UTRR model per configured K
- evaluate  : Score trained models (single or ensemble), accuracy ratios,
              ZF sum rate against the perfect-CSI reference
- sweep_snr : Regenerate test noise per SNR and score the configured methods

Every run directory holds config.conf (seed pinned), run.log and the
command's tables. With timing disabled all CSV content is a pure function
of the config snapshot.

Author: TRR Workbench Team
=============================================================================
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from . import utrr_network
from .config import ExperimentConfig, format_config, load_config, parse_config, snapshot, with_overrides
from .exceptions import (
    ConfigError,
    DimensionMismatchError,
    IllConditionedError,
    UnknownSolverError,
)
from .forms import NETWORK_METHODS, SOLVER_NAMES
from .metrics import (
    MultiUserChannel,
    accurate_ratio,
    nmse_db,
    per_sample_errors,
    sum_rate,
    zf_precoder,
)
from .models import ExperimentRun, make_run_id
from .parallel import parallel_map
from .reports import export_workbook
from .sensing import (
    NOISELESS,
    SWEEP_NOISE_SUBSTREAM,
    build_dataset,
    generate_split_channels,
    is_noiseless,
    measurement_matrix_for,
    merge_rows,
    observe_split,
)
from .storage import (
    ACCURACY_COLUMNS,
    CONFIG_FILE,
    DATASET_FILE,
    HISTORY_COLUMNS,
    LOG_FILE,
    RESULT_COLUMNS,
    SUM_RATE_COLUMNS,
    TRACE_COLUMNS,
    history_rows,
    load_models,
    model_filename,
    read_dataset,
    trace_rows,
    write_csv,
    write_dataset,
    write_model,
)
from .trr_solvers import (
    TrrProblem,
    initial_point,
    itrr,
    itrr_bb,
    itrr_nesterov,
    lift_matrix,
    lipschitz_constant,
    omp,
    pgd_lasso,
    pgd_ridge,
)


logger = logging.getLogger(__name__)


AGGREGATE_SAMPLE_ID = -1
PERFECT_CSI = "perfect-csi"
ENSEMBLE = "utrr-ensemble"


# =============================================================================
# RUN ARTIFACTS
# =============================================================================

@dataclass
class RunArtifact:
    run_id: str
    command: str
    out_dir: Path
    seed: int
    config: ExperimentConfig
    record: ExperimentRun
    files: List[Path] = field(default_factory=list)
    summary: List[str] = field(default_factory=list)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def add_table(self, name: str, columns, rows) -> Path:
        path = write_csv(self.path(name), columns, rows)
        self.files.append(path)
        return path


def _snapshot_text(command: str, cfg: ExperimentConfig, seed: int, arguments: str) -> str:
    header = f"# {command} {arguments}".rstrip()
    return f"{header}\n{format_config(snapshot(cfg, seed))}"


@contextmanager
def open_run(command: str, cfg: ExperimentConfig, seed: int, out_dir=None, arguments: str = ""):
    """
    Create the artifact directory and registry row for one command.

    The run is marked failed (and the exception re-raised) if the body
    raises; otherwise finished with the summary lines as its message.
    """
    text = _snapshot_text(command, cfg, seed, arguments)
    run_id = make_run_id(command, text, seed)
    out_dir = Path(out_dir) if out_dir else Path(settings.TRR_RUNS_DIR) / f"{command}-{run_id}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / CONFIG_FILE).write_text(text, encoding="utf-8")

    record, _ = ExperimentRun.objects.update_or_create(
        run_id=run_id,
        defaults={
            "command": command,
            "config_snapshot": text,
            "seed": seed,
            "output_dir": str(out_dir),
            "status": ExperimentRun.STATUS_PENDING,
            "finished_at": None,
            "wall_seconds": None,
            "message": "",
        },
    )
    record.metrics.all().delete()

    package_logger = logging.getLogger("beamspace")
    handler = logging.FileHandler(out_dir / LOG_FILE, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    package_logger.addHandler(handler)

    run = RunArtifact(run_id=run_id, command=command, out_dir=out_dir, seed=seed, config=cfg, record=record)
    started = time.perf_counter()
    logger.info(f"[RUN] {command} {run_id} -> {out_dir} (seed {seed})")
    try:
        yield run
    except Exception as exc:
        logger.error(f"[RUN] {command} {run_id} failed: {exc}")
        record.mark_failed(time.perf_counter() - started, f"{type(exc).__name__}: {exc}")
        raise
    else:
        elapsed = time.perf_counter() - started
        record.mark_finished(elapsed, "\n".join(run.summary))
        logger.info(f"[RUN] {command} {run_id} finished in {elapsed:.1f}s")
    finally:
        package_logger.removeHandler(handler)
        handler.close()


def _finish_tables(run: RunArtifact, xlsx: bool):
    if xlsx and run.files:
        run.files.append(export_workbook(run.out_dir, list(run.files), run.run_id, run.command))


# =============================================================================
# DATASETS
# =============================================================================

def load_dataset_dir(dataset_dir) -> Tuple[tuple, Optional[ExperimentConfig]]:
    """
    Datasets of a gen_data run plus the config it was generated with
    (None when the directory has no snapshot).
    """
    dataset_dir = Path(dataset_dir)
    snapshot_path = dataset_dir / CONFIG_FILE
    dataset_cfg = None
    if snapshot_path.is_file():
        dataset_cfg = parse_config(snapshot_path.read_text(encoding="utf-8"))
    snr_db = dataset_cfg.snr_db if dataset_cfg else None
    return read_dataset(dataset_dir / DATASET_FILE, snr_db=snr_db), dataset_cfg


def config_for(config_path=None, dataset_dir=None) -> ExperimentConfig:
    """--config when given, else the dataset's own snapshot, else defaults."""
    if config_path:
        return load_config(config_path)
    if dataset_dir:
        snapshot_path = Path(dataset_dir) / CONFIG_FILE
        if snapshot_path.is_file():
            return parse_config(snapshot_path.read_text(encoding="utf-8"))
    return ExperimentConfig()


def _check_dims(cfg: ExperimentConfig, phi) -> ExperimentConfig:
    if (cfg.n_measurements, cfg.n_antennas) != (phi.m_rows, phi.n_cols):
        raise DimensionMismatchError(
            f"config has M={cfg.n_measurements}, N={cfg.n_antennas} but the dataset "
            f"has M={phi.m_rows}, N={phi.n_cols}"
        )
    return cfg


def gen_data(cfg: ExperimentConfig, seed: int, out_dir=None, threads: int = 1) -> RunArtifact:
    with open_run("gen_data", cfg, seed, out_dir) as run:
        splits = build_dataset(cfg, seed, threads)
        write_dataset(run.path(DATASET_FILE), *splits)
        run.files.append(run.path(DATASET_FILE))
        for split in splits:
            run.record.record_metric("dataset", f"{split.split}_pairs", split.n_pairs)
            run.summary.append(f"{split.split}: {split.n_channels} channels, {split.n_pairs} real pairs")
    return run


# =============================================================================
# ESTIMATORS
# =============================================================================

@dataclass(frozen=True)
class Estimator:
    """One reconstruction method bound to a config and a measurement matrix."""

    name: str
    k_param: Optional[int]
    solve: Callable  # (y, label) -> (x_hat, SolverReport | None)


def _z0(problem: TrrProblem, cfg: ExperimentConfig):
    return initial_point(problem, cfg.init)


def _itrr_family(solver):
    def build(cfg, phi, lipschitz):
        a_matrix = lift_matrix(phi)

        def solve(y, label):
            problem = TrrProblem(a_matrix, np.asarray(y, dtype=float), cfg.rho, cfg.top_k, lipschitz)
            report = solver(problem, _z0(problem, cfg), cfg.eps, cfg.max_iter, label)
            return report.solution, report
        return solve, cfg.top_k
    return build


def _ridge(cfg, phi, lipschitz):
    z0 = None if cfg.init == "lift" else np.zeros(2 * phi.n_cols)

    def solve(y, label):
        report = pgd_ridge(
            phi, y, cfg.lambda2, cfg.step_rule, cfg.eps, cfg.max_iter,
            z0=z0, label=label, lipschitz=lipschitz,
        )
        return report.solution, report
    return solve, None


def _lasso(cfg, phi, lipschitz):
    z0 = None if cfg.init == "lift" else np.zeros(2 * phi.n_cols)

    def solve(y, label):
        report = pgd_lasso(
            phi, y, cfg.lambda1, cfg.eps, cfg.lasso_iterations, z0=z0, label=label, lipschitz=lipschitz,
        )
        return report.solution, report
    return solve, None


def _omp(cfg, phi, lipschitz):
    return (lambda y, label: (omp(phi, y, cfg.omp_sparsity), None)), cfg.omp_sparsity


def _adjoint(cfg, phi, lipschitz):
    # x = Phi^T y, the network's initializing layer on its own
    return (lambda y, label: (phi.entries.T @ np.asarray(y, dtype=float), None)), None


SOLVERS = {
    "itrr": _itrr_family(itrr),
    "itrr-bb": _itrr_family(itrr_bb),
    "itrr-nesterov": _itrr_family(itrr_nesterov),
    "pgd-ridge": _ridge,
    "pgd-lasso": _lasso,
    "omp": _omp,
    "adjoint": _adjoint,
}


def make_estimator(name: str, cfg: ExperimentConfig, phi, lipschitz: Optional[float] = None) -> Estimator:
    if name not in SOLVERS:
        raise UnknownSolverError(f"unknown solver '{name}' (choose from {', '.join(SOLVER_NAMES)})")
    if lipschitz is None:
        lipschitz = lipschitz_constant(lift_matrix(phi))
    solve, k_param = SOLVERS[name](cfg, phi, lipschitz)
    return Estimator(name=name, k_param=k_param, solve=solve)


def run_estimator(estimator: Estimator, dataset, threads: int = 1, timing: bool = True):
    """
    Solve every pair of a dataset.

    Returns (estimate rows, reports, per-row wall time in ms).
    """
    def one(row):
        started = time.perf_counter()
        x_hat, report = estimator.solve(dataset.measurements[row], dataset.labels[row])
        elapsed = (time.perf_counter() - started) * 1000.0 if timing else 0.0
        return x_hat, report, elapsed

    results = parallel_map(one, range(dataset.n_pairs), threads)
    estimates = np.array([r[0] for r in results], dtype=float).reshape(dataset.n_pairs, dataset.labels.shape[1])
    return estimates, [r[1] for r in results], np.array([r[2] for r in results])


def run_network(predict: Callable, dataset, timing: bool = True):
    """Batch estimates from a network; time is split evenly over rows."""
    started = time.perf_counter()
    estimates = predict(dataset.measurements)
    elapsed = (time.perf_counter() - started) * 1000.0 if timing else 0.0
    per_row = elapsed / dataset.n_pairs if dataset.n_pairs else 0.0
    return estimates, np.full(dataset.n_pairs, per_row)


# =============================================================================
# RESULT ROWS
# =============================================================================

def _snr_label(snr_db):
    return NOISELESS if is_noiseless(snr_db) else snr_db


def _blank(value):
    return "" if value is None else value


def channel_errors(labels: np.ndarray, estimates: np.ndarray) -> np.ndarray:
    """Normalized squared error per complex channel (rows 2c, 2c + 1)."""
    return per_sample_errors(merge_rows(labels), merge_rows(estimates))


def result_rows(run_id, method, snr_db, k_param, labels, estimates, wall_ms, per_sample=True):
    """Per-channel error rows followed by the aggregate NMSE row."""
    errors = channel_errors(labels, estimates)
    channel_ms = wall_ms[0::2] + wall_ms[1::2]
    base = {"run_id": run_id, "method": method, "snr_db": _snr_label(snr_db), "k_param": _blank(k_param)}

    rows = []
    if per_sample:
        for c, (error, ms) in enumerate(zip(errors, channel_ms)):
            rows.append({**base, "sample_id": c, "nmse_db_or_error": float(error), "wall_ms": float(ms)})
    aggregate = nmse_db(merge_rows(labels), merge_rows(estimates))
    rows.append({
        **base,
        "sample_id": AGGREGATE_SAMPLE_ID,
        "nmse_db_or_error": aggregate,
        "wall_ms": float(np.mean(channel_ms)),
    })
    return rows, errors, aggregate


def accuracy_rows(run_id, method, k_param, errors, thresholds):
    return [
        {
            "run_id": run_id,
            "method": method,
            "k_param": _blank(k_param),
            "threshold": th,
            "ratio": accurate_ratio(errors, th),
        }
        for th in thresholds
    ]


def _zf_groups(truth: np.ndarray, estimates: np.ndarray, n_users: int, method: str):
    """(true channels, precoder) per group of U consecutive channels."""
    groups = []
    for g in range(len(truth) // n_users):
        rows = slice(g * n_users, (g + 1) * n_users)
        try:
            precoder = zf_precoder(MultiUserChannel.from_rows(estimates[rows]))
        except IllConditionedError as exc:
            logger.warning(f"[EVAL] {method}: user group {g} skipped ({exc})")
            continue
        groups.append((MultiUserChannel.from_rows(truth[rows]), precoder))
    return groups


def sum_rate_rows(run_id, method, truth, estimates, n_users, snr_dl_list):
    """Mean ZF sum rate over user groups at each downlink SNR."""
    groups = _zf_groups(truth, estimates, n_users, method)
    rows = []
    for snr_dl in snr_dl_list:
        rate = float(np.mean([sum_rate(h, f, snr_dl) for h, f in groups])) if groups else float("nan")
        rows.append({"run_id": run_id, "method": method, "snr_dl_db": snr_dl, "sum_rate": rate})
    return rows


# =============================================================================
# SOLVE
# =============================================================================

def solve(cfg: ExperimentConfig, seed: int, dataset_dir, solver_name: str, out_dir=None,
          threads: int = 1, timing: bool = True, xlsx: bool = False) -> RunArtifact:
    if solver_name not in SOLVERS:
        raise UnknownSolverError(f"unknown solver '{solver_name}' (choose from {', '.join(SOLVER_NAMES)})")
    (_, _, test), _ = load_dataset_dir(dataset_dir)
    cfg = _check_dims(with_overrides(cfg, solver=solver_name), test.phi_ref)

    with open_run("solve", cfg, seed, out_dir) as run:
        estimator = make_estimator(solver_name, cfg, test.phi_ref)
        logger.info(f"[SOLVE] {solver_name} on {test.n_pairs} test pairs")
        estimates, reports, wall_ms = run_estimator(estimator, test, threads, timing)

        if test.n_channels:
            rows, _, aggregate = result_rows(
                run.run_id, solver_name, test.snr_db, estimator.k_param, test.labels, estimates, wall_ms
            )
            run.add_table("results.csv", RESULT_COLUMNS, rows)
            run.record.record_metric(solver_name, "nmse_db", aggregate, test.snr_db, estimator.k_param)
            run.summary.append(f"{solver_name}: NMSE {aggregate:.2f} dB over {test.n_channels} channels")
        else:
            run.add_table("results.csv", RESULT_COLUMNS, [])
            run.summary.append(f"{solver_name}: empty test split")

        if reports and reports[0] is not None:
            run.add_table("traces.csv", TRACE_COLUMNS, trace_rows(reports[0]))
        _finish_tables(run, xlsx)
    return run


# =============================================================================
# TRAIN
# =============================================================================

def train(cfg: ExperimentConfig, seed: int, dataset_dir, out_dir=None, threads: int = 1,
          timing: bool = True, xlsx: bool = False) -> RunArtifact:
    (train_set, val_set, test), _ = load_dataset_dir(dataset_dir)
    cfg = _check_dims(cfg, train_set.phi_ref)
    phi = train_set.phi_ref

    with open_run("train", cfg, seed, out_dir) as run:
        def train_one(top_k):
            params = utrr_network.init_params(phi, cfg.n_layers, top_k, rcc=cfg.rcc)
            return utrr_network.train(params, train_set, val_set, cfg.train_config(seed))

        trained = parallel_map(train_one, cfg.train_top_k, threads)

        rows = []
        for top_k, (params, history) in zip(cfg.train_top_k, trained):
            model_path = write_model(run.path(model_filename(top_k)), params)
            run.files.append(model_path)
            run.add_table(f"history_k{top_k}.csv", HISTORY_COLUMNS, history_rows(history))
            run.record.record_metric("utrr", "train_seconds", history.wall_seconds, test.snr_db, top_k)
            run.record.record_metric("utrr", "best_val_loss", history.best_val_loss, test.snr_db, top_k)

            if test.n_channels:
                estimates, wall_ms = run_network(lambda y: utrr_network.predict(params, y), test, timing)
                k_rows, _, aggregate = result_rows(
                    run.run_id, "utrr", test.snr_db, top_k, test.labels, estimates, wall_ms, per_sample=False
                )
                rows.extend(k_rows)
                run.record.record_metric("utrr", "nmse_db", aggregate, test.snr_db, top_k)
                run.summary.append(
                    f"K={top_k}: {history.epochs_run} epochs, test NMSE {aggregate:.2f} dB, "
                    f"{history.wall_seconds:.1f}s ({'RCC' if cfg.rcc else 'top-K in all layers'})"
                )

        run.add_table("results.csv", RESULT_COLUMNS, rows)
        _finish_tables(run, xlsx)
    return run


# =============================================================================
# EVALUATE
# =============================================================================

def _check_models(models, phi):
    for model in models:
        if (model.m_rows, model.n_cols) != (phi.m_rows, phi.n_cols):
            raise DimensionMismatchError(
                f"model K={model.top_k_last} expects M={model.m_rows}, N={model.n_cols}; "
                f"data has M={phi.m_rows}, N={phi.n_cols}"
            )
        if not np.array_equal(model.phi_init.entries, phi.entries):
            logger.warning(f"[EVAL] model K={model.top_k_last} was trained with a different measurement matrix")


def evaluate(cfg: ExperimentConfig, seed: int, models_dir, dataset_dir, mode: str = "single",
             thresholds: Optional[Sequence[float]] = None, measurements: Optional[int] = None,
             out_dir=None, threads: int = 1, timing: bool = True, xlsx: bool = False) -> RunArtifact:
    if mode not in ("single", "ensemble"):
        raise ConfigError(f"mode must be 'single' or 'ensemble', got '{mode}'")
    (_, _, test), _ = load_dataset_dir(dataset_dir)
    if measurements is not None and measurements != test.phi_ref.m_rows:
        raise DimensionMismatchError(f"--measurements {measurements} but the dataset has M={test.phi_ref.m_rows}")
    if thresholds:
        cfg = with_overrides(cfg, thresholds=tuple(thresholds))
    cfg = _check_dims(cfg, test.phi_ref)

    models = load_models(models_dir)
    _check_models(models, test.phi_ref)

    arguments = f"--mode {mode}"
    with open_run("evaluate", cfg, seed, out_dir, arguments) as run:
        truth = test.complex_labels()
        results, accuracy, rates = [], [], []

        rates.extend(sum_rate_rows(run.run_id, PERFECT_CSI, truth, truth, cfg.n_users, cfg.snr_dl_db))

        candidates = [
            ("utrr", model.top_k_last, lambda y, model=model: utrr_network.predict(model, y))
            for model in models
        ]
        if mode == "ensemble":
            candidates.append((ENSEMBLE, None, lambda y: utrr_network.ensemble_predict(models, y, threads)))

        for method, k_param, predict in candidates:
            estimates, wall_ms = run_network(predict, test, timing)
            rows, errors, aggregate = result_rows(
                run.run_id, method, test.snr_db, k_param, test.labels, estimates, wall_ms
            )
            results.extend(rows)
            accuracy.extend(accuracy_rows(run.run_id, method, k_param, errors, cfg.thresholds))
            rates.extend(sum_rate_rows(run.run_id, method, truth, merge_rows(estimates), cfg.n_users, cfg.snr_dl_db))

            run.record.record_metric(method, "nmse_db", aggregate, test.snr_db, k_param)
            label = method if k_param is None else f"{method} K={k_param}"
            logger.info(f"[EVAL] {label}: NMSE {aggregate:.2f} dB")
            run.summary.append(f"{label}: NMSE {aggregate:.2f} dB")

        run.add_table("results.csv", RESULT_COLUMNS, results)
        run.add_table("accuracy.csv", ACCURACY_COLUMNS, accuracy)
        run.add_table("sum_rate.csv", SUM_RATE_COLUMNS, rates)
        _finish_tables(run, xlsx)
    return run


# =============================================================================
# SNR SWEEP
# =============================================================================

def sweep_snr(cfg: ExperimentConfig, seed: int, snr_list: Sequence, models_dir=None, out_dir=None,
              threads: int = 1, timing: bool = True, xlsx: bool = False) -> RunArtifact:
    """
    The test channels of (cfg, seed) observed afresh at every SNR; the noise
    of SNR point j comes from its own sub-stream, so points are independent.
    """
    if not snr_list:
        raise ConfigError("at least one SNR is required")
    network_methods = [m for m in cfg.sweep_methods if m in NETWORK_METHODS]
    models = load_models(models_dir) if models_dir else []
    if network_methods and not models:
        raise ConfigError(f"sweep method(s) {', '.join(network_methods)} need --models")

    phi = measurement_matrix_for(cfg, seed)
    _check_models(models, phi)

    labels = ", ".join(str(_snr_label(snr)) for snr in snr_list)
    with open_run("sweep_snr", cfg, seed, out_dir, f"--snr {labels}") as run:
        channels = generate_split_channels(cfg, seed, "test", cfg.n_test, threads)
        lipschitz = lipschitz_constant(lift_matrix(phi))
        estimators = [
            make_estimator(m, cfg, phi, lipschitz) for m in cfg.sweep_methods if m not in NETWORK_METHODS
        ]

        rows = []
        for j, snr_db in enumerate(snr_list):
            test = observe_split(
                phi, channels, snr_db, seed, "test",
                noise_counters=(SWEEP_NOISE_SUBSTREAM, j), threads=threads,
            )
            if not test.n_channels:
                continue

            candidates = []
            for estimator in estimators:
                estimates, _, wall_ms = run_estimator(estimator, test, threads, timing)
                candidates.append((estimator.name, estimator.k_param, estimates, wall_ms))
            if "utrr" in network_methods:
                for model in models:
                    estimates, wall_ms = run_network(lambda y, model=model: utrr_network.predict(model, y), test, timing)
                    candidates.append(("utrr", model.top_k_last, estimates, wall_ms))
            if ENSEMBLE in network_methods:
                estimates, wall_ms = run_network(lambda y: utrr_network.ensemble_predict(models, y, threads), test, timing)
                candidates.append((ENSEMBLE, None, estimates, wall_ms))

            for method, k_param, estimates, wall_ms in candidates:
                point_rows, _, aggregate = result_rows(
                    run.run_id, method, test.snr_db, k_param, test.labels, estimates, wall_ms, per_sample=False
                )
                rows.extend(point_rows)
                run.record.record_metric(method, "nmse_db", aggregate, test.snr_db, k_param)
                logger.info(f"[SWEEP] SNR {_snr_label(snr_db)}: {method} {aggregate:.2f} dB")

        run.add_table("results.csv", RESULT_COLUMNS, rows)
        run.summary.append(f"{len(rows)} (snr, method) rows over {len(snr_list)} SNR point(s)")
        _finish_tables(run, xlsx)
    return run
