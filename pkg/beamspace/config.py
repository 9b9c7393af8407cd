"""
=============================================================================
Experiment Configuration
=============================================================================

Flat UTF-8 config files, one `key = value` per line:

    # desk-scale training run
    n_antennas = 64
    n_measurements = 32
    snr_db = 20.0              # or: noiseless
    ensemble_top_k = 0, 4, 16, 64

Keys left out take the ExperimentConfig defaults. Values are validated by
ExperimentConfigForm; any problem raises ConfigError with one
`line N: key: message` diagnostic per issue.

Seed precedence:
----------------
    --seed flag  >  TRR_SEED env var  >  `seed` key  >  settings.TRR_DEFAULT_SEED

Author: TRR Workbench Team
=============================================================================
"""

import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from django.conf import settings

from .exceptions import ConfigError
from .forms import ExperimentConfigForm
from .sensing import NOISELESS
from .utrr_network import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_LEARNING_RATES,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE,
    TrainConfig,
)


logger = logging.getLogger(__name__)


CONFIG_SUFFIX = ".conf"


@dataclass(frozen=True)
class ExperimentConfig:
    run_name: str = "experiment"

    # N, M, U; B and N_RF only document M = B * N_RF
    n_antennas: int = 64
    n_measurements: int = 32
    n_users: int = 4
    n_blocks: Optional[int] = None
    n_rf: Optional[int] = None
    n_paths: int = 3
    sparsity: int = 0
    snr_db: Optional[float] = 20.0

    n_train: int = 2000
    n_val: int = 250
    n_test: int = 250
    seed: Optional[int] = None

    solver: str = "itrr-bb"
    rho: float = 1.0
    top_k: int = 16
    eps: float = 1e-6
    max_iter: int = 600
    lambda1: float = 1e-4
    lasso_max_iter: Optional[int] = None
    lambda2: float = 1.0
    init: str = "lift"
    step_rule: str = "bb"
    omp_sparsity: int = 16

    n_layers: int = 10
    top_k_last: int = 4
    learning_rates: Tuple[float, ...] = DEFAULT_LEARNING_RATES
    max_epochs: int = DEFAULT_MAX_EPOCHS
    patience: int = DEFAULT_PATIENCE
    batch_size: int = DEFAULT_BATCH_SIZE
    optimizer: str = "sgd"
    rcc: bool = True
    ensemble_top_k: Tuple[int, ...] = (0, 4, 16, 64)

    thresholds: Tuple[float, ...] = (0.01, 0.001)
    snr_dl_db: Tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    sweep_methods: Tuple[str, ...] = ("itrr-bb",)

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None

    @property
    def lasso_iterations(self) -> int:
        return self.lasso_max_iter or self.max_iter

    @property
    def train_top_k(self) -> Tuple[int, ...]:
        """One model per K; falls back to top_k_last when the list is empty."""
        return self.ensemble_top_k or (self.top_k_last,)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rates=self.learning_rates,
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            seed=seed,
        )


# =============================================================================
# PARSING
# =============================================================================

def _format_value(value) -> str:
    if value is None:
        return NOISELESS
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(item) for item in value)
    return str(value)


def _as_data(values: Dict[str, object]) -> Dict[str, str]:
    """Form data for typed values; unset optional keys become ''."""
    return {
        key: "" if value is None and key != "snr_db" else _format_value(value)
        for key, value in values.items()
    }


def _values_of(cfg: ExperimentConfig) -> Dict[str, object]:
    return {f.name: getattr(cfg, f.name) for f in fields(ExperimentConfig)}


def _validate(data: Dict[str, str], line_of: Dict[str, int]) -> ExperimentConfig:
    form = ExperimentConfigForm(data=data)
    if form.is_valid():
        return ExperimentConfig(**form.cleaned_data)

    diagnostics = []
    for field, errors in form.errors.as_data().items():
        message = " ".join(msg for err in errors for msg in err.messages)
        if field in line_of:
            diagnostics.append(f"line {line_of[field]}: {field}: {message}")
        else:
            diagnostics.append(f"{field}: {message}")
    raise ConfigError(diagnostics)


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; unknown or repeated keys are errors."""
    known = {f.name for f in fields(ExperimentConfig)}
    data = _as_data(_values_of(ExperimentConfig()))
    line_of: Dict[str, int] = {}
    diagnostics = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            diagnostics.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            diagnostics.append(f"line {lineno}: {key}: unknown key")
            continue
        if key in line_of:
            diagnostics.append(f"line {lineno}: {key}: repeated key (first set on line {line_of[key]})")
            continue
        data[key] = value
        line_of[key] = lineno

    if diagnostics:
        raise ConfigError(diagnostics)
    return _validate(data, line_of)


def format_config(cfg: ExperimentConfig) -> str:
    """Inverse of parse_config; optional keys left unset are omitted."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if value is None and f.name != "snr_db":
            continue
        lines.append(f"{f.name} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of cfg with changes applied and validated again."""
    if not changes:
        return cfg
    values = _values_of(cfg)
    unknown = sorted(set(changes) - set(values))
    if unknown:
        raise ConfigError([f"{key}: unknown key" for key in unknown])
    values.update(changes)
    return _validate(_as_data(values), {})


def resolve_config_path(path) -> Path:
    """A file path, or the name of a preset shipped under presets/."""
    candidate = Path(path)
    if candidate.is_file():
        return candidate
    preset = Path(settings.TRR_PRESETS_DIR) / f"{candidate.name}{CONFIG_SUFFIX}"
    if preset.is_file():
        return preset
    raise ConfigError(f"config file not found: {path}")


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    config_path = resolve_config_path(path)
    logger.info(f"[CONFIG] loading {config_path}")
    try:
        text = config_path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {config_path}: {exc}")
    return parse_config(text)


def resolve_seed(cli_seed: Optional[int], cfg: ExperimentConfig) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    env_seed = os.getenv("TRR_SEED")
    if env_seed not in (None, ""):
        try:
            return int(env_seed)
        except ValueError:
            raise ConfigError(f"TRR_SEED must be an integer, got {env_seed!r}")
    if cfg.seed is not None:
        return cfg.seed
    return int(settings.TRR_DEFAULT_SEED)


def snapshot(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """The config as it was actually run, seed pinned."""
    return replace(cfg, seed=seed)
