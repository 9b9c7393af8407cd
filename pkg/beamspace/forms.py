"""
=============================================================================
Workbench Forms
=============================================================================

Validation of experiment configuration files.

A config file is parsed into a plain dict of strings (see config.py) and
bound to ExperimentConfigForm, which coerces every value and enforces the
range and cross-field rules. Field names match ExperimentConfig exactly.

Form Categories:
----------------
    - CommaSeparatedField   : list-valued keys (learning rates, K lists, ...)
    - ExperimentConfigForm  : every key of an experiment config

Author: TRR Workbench Team
=============================================================================
"""

import math

from django import forms
from django.core.validators import RegexValidator

from .sensing import NOISELESS


SOLVER_NAMES = ("itrr", "itrr-bb", "itrr-nesterov", "pgd-ridge", "pgd-lasso", "omp", "adjoint")

# Sweep rows may also come from trained networks loaded with --models
NETWORK_METHODS = ("utrr", "utrr-ensemble")
SWEEP_METHOD_NAMES = SOLVER_NAMES + NETWORK_METHODS

BOOL_CHOICES = [("true", "true"), ("false", "false")]


# =============================================================================
# VALIDATORS
# =============================================================================

run_name_chars = RegexValidator(
    regex=r"^[A-Za-z0-9_.-]+$",
    message="run_name may contain letters, digits, '_', '.' and '-' only",
)


def _as_bool(value) -> bool:
    return value is True or value == "true"


# =============================================================================
# FIELDS
# =============================================================================

class CommaSeparatedField(forms.Field):
    """
    Comma-separated list whose items are cleaned by item_field.
    Returns a tuple; an empty value gives ().
    """

    def __init__(self, item_field, *, min_items=0, **kwargs):
        self.item_field = item_field
        self.min_items = min_items
        kwargs.setdefault("required", False)
        super().__init__(**kwargs)

    def to_python(self, value):
        if value in self.empty_values:
            return ()
        if isinstance(value, (list, tuple)):
            items = list(value)
        else:
            items = [part.strip() for part in str(value).split(",")]
        return tuple(self.item_field.clean(item) for item in items)

    def validate(self, value):
        super().validate(value)
        if len(value) < self.min_items:
            raise forms.ValidationError(f"at least {self.min_items} value(s) required")


# =============================================================================
# EXPERIMENT CONFIG FORM
# =============================================================================

class ExperimentConfigForm(forms.Form):
    """
    Every key an experiment config may contain.

    The clean() method carries the rules that involve more than one key:
    M <= N, M = B * N_RF when both are given, and every top-K value
    bounded by 2N.
    """

    run_name = forms.CharField(max_length=80, validators=[run_name_chars])

    # System dimensions
    n_antennas = forms.IntegerField(min_value=1)
    n_measurements = forms.IntegerField(min_value=1)
    n_users = forms.IntegerField(min_value=1)
    n_blocks = forms.IntegerField(min_value=1, required=False)
    n_rf = forms.IntegerField(min_value=1, required=False)
    n_paths = forms.IntegerField(min_value=1)
    sparsity = forms.IntegerField(min_value=0)
    snr_db = forms.CharField()

    # Dataset sizes (channels per split)
    n_train = forms.IntegerField(min_value=0)
    n_val = forms.IntegerField(min_value=0)
    n_test = forms.IntegerField(min_value=0)
    seed = forms.IntegerField(min_value=0, required=False)

    # Iterative solvers
    solver = forms.ChoiceField(choices=[(name, name) for name in SOLVER_NAMES])
    rho = forms.FloatField()
    top_k = forms.IntegerField(min_value=0)
    eps = forms.FloatField()
    max_iter = forms.IntegerField(min_value=1)
    lambda1 = forms.FloatField(min_value=0.0)
    lasso_max_iter = forms.IntegerField(min_value=1, required=False)
    lambda2 = forms.FloatField(min_value=0.0)
    init = forms.ChoiceField(choices=[("lift", "lift"), ("zero", "zero")])
    step_rule = forms.ChoiceField(choices=[("bb", "bb"), ("fixed", "fixed")])
    omp_sparsity = forms.IntegerField(min_value=1)

    # Unfolded network
    n_layers = forms.IntegerField(min_value=1, error_messages={"min_value": "L ≥ 1"})
    top_k_last = forms.IntegerField(min_value=0)
    learning_rates = CommaSeparatedField(forms.FloatField(min_value=0.0), min_items=1)
    max_epochs = forms.IntegerField(min_value=1)
    patience = forms.IntegerField(min_value=1)
    batch_size = forms.IntegerField(min_value=1)
    optimizer = forms.ChoiceField(choices=[("sgd", "sgd")])
    rcc = forms.TypedChoiceField(choices=BOOL_CHOICES, coerce=_as_bool)
    ensemble_top_k = CommaSeparatedField(forms.IntegerField(min_value=0))

    # Evaluation
    thresholds = CommaSeparatedField(forms.FloatField(), min_items=1)
    snr_dl_db = CommaSeparatedField(forms.FloatField())
    sweep_methods = CommaSeparatedField(
        forms.ChoiceField(choices=[(name, name) for name in SWEEP_METHOD_NAMES]),
        min_items=1,
    )

    def clean_snr_db(self):
        """'noiseless' or a finite dB value; noiseless cleans to None."""
        value = self.cleaned_data["snr_db"].strip()
        if value == NOISELESS:
            return None
        try:
            snr = float(value)
        except ValueError:
            raise forms.ValidationError(f"expected a number or '{NOISELESS}'")
        if not math.isfinite(snr):
            raise forms.ValidationError("SNR must be finite")
        return snr

    def clean_rho(self):
        rho = self.cleaned_data["rho"]
        if rho <= 0:
            raise forms.ValidationError("rho must be positive")
        return rho

    def clean_eps(self):
        eps = self.cleaned_data["eps"]
        if eps <= 0:
            raise forms.ValidationError("eps must be positive")
        return eps

    def clean_thresholds(self):
        thresholds = self.cleaned_data["thresholds"]
        if any(th <= 0 for th in thresholds):
            raise forms.ValidationError("thresholds must be positive")
        return thresholds

    def clean(self):
        cleaned = super().clean()
        n = cleaned.get("n_antennas")
        m = cleaned.get("n_measurements")

        if n is not None and m is not None and m > n:
            self.add_error("n_measurements", "M must not exceed N")
        if n is not None and cleaned.get("n_users") is not None and cleaned["n_users"] > n:
            self.add_error("n_users", "zero-forcing needs U <= N")

        blocks, n_rf = cleaned.get("n_blocks"), cleaned.get("n_rf")
        if m is not None and blocks is not None and n_rf is not None and m != blocks * n_rf:
            self.add_error("n_measurements", f"M must equal B * N_RF = {blocks * n_rf}")

        if n is not None:
            if cleaned.get("sparsity") is not None and cleaned["sparsity"] > n:
                self.add_error("sparsity", "sparsity must not exceed N")
            for key in ("top_k", "top_k_last"):
                if cleaned.get(key) is not None and cleaned[key] > 2 * n:
                    self.add_error(key, f"must lie in [0, 2N] = [0, {2 * n}]")
            if any(k > 2 * n for k in cleaned.get("ensemble_top_k", ())):
                self.add_error("ensemble_top_k", f"every K must lie in [0, {2 * n}]")

        omp_sparsity = cleaned.get("omp_sparsity")
        if omp_sparsity is not None and n is not None and m is not None and omp_sparsity > min(m, n):
            self.add_error("omp_sparsity", "omp_sparsity must not exceed min(M, N)")

        return cleaned
