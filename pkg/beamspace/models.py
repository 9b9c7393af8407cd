"""
=============================================================================
Run Registry Models
=============================================================================

Bookkeeping for workbench runs. Artifact files in the run directory are the
product; these rows make runs and their headline numbers easy to find.

Models Overview:
----------------
- ExperimentRun : One invocation of a workbench command
- RunMetric     : One aggregate number produced by a run (NMSE, ratio, rate)

Author: TRR Workbench Team
=============================================================================
"""

import hashlib

from django.db import models
from django.utils import timezone


def make_run_id(command: str, config_text: str, seed: int) -> str:
    """
    Short deterministic id of (command, config snapshot, seed).
    Reruns of the same experiment share an id, so CSV content is stable.
    """
    digest = hashlib.sha256(f"{command}\n{seed}\n{config_text}".encode("utf-8")).hexdigest()
    return digest[:12]


# =============================================================================
# EXPERIMENT RUN MODEL
# =============================================================================

class ExperimentRun(models.Model):
    """
    One invocation of gen_data, solve, train, evaluate or sweep_snr.

    A rerun with the same run_id reuses the row: status goes back to
    pending and old metrics are dropped.
    """

    COMMAND_CHOICES = [
        ("gen_data", "Generate dataset"),
        ("solve", "Iterative solve"),
        ("train", "Train UTRR"),
        ("evaluate", "Evaluate models"),
        ("sweep_snr", "SNR sweep"),
    ]

    STATUS_PENDING = "pending"
    STATUS_FINISHED = "finished"
    STATUS_FAILED = "failed"
    STATUS_CHOICES = [
        (STATUS_PENDING, "Pending"),
        (STATUS_FINISHED, "Finished"),
        (STATUS_FAILED, "Failed"),
    ]

    run_id = models.CharField(
        max_length=16,
        unique=True,
        help_text="Hash of command, config snapshot and seed"
    )
    command = models.CharField(max_length=20, choices=COMMAND_CHOICES)
    config_snapshot = models.TextField(
        help_text="Config text exactly as run, seed pinned"
    )
    seed = models.BigIntegerField()
    output_dir = models.CharField(max_length=500)

    status = models.CharField(
        max_length=10,
        choices=STATUS_CHOICES,
        default=STATUS_PENDING
    )
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)
    wall_seconds = models.FloatField(null=True, blank=True)
    message = models.TextField(blank=True, default="")

    class Meta:
        ordering = ["-created_at"]

    def mark_finished(self, wall_seconds: float, message: str = ""):
        self.status = self.STATUS_FINISHED
        self.finished_at = timezone.now()
        self.wall_seconds = wall_seconds
        self.message = message
        self.save(update_fields=["status", "finished_at", "wall_seconds", "message"])

    def mark_failed(self, wall_seconds: float, message: str):
        self.status = self.STATUS_FAILED
        self.finished_at = timezone.now()
        self.wall_seconds = wall_seconds
        self.message = message
        self.save(update_fields=["status", "finished_at", "wall_seconds", "message"])

    def record_metric(self, method: str, metric: str, value: float, snr_db=None, k_param=None):
        return RunMetric.objects.create(
            run=self,
            method=method,
            metric=metric,
            value=float(value),
            snr_db=snr_db,
            k_param=k_param,
        )

    def __str__(self):
        return f"{self.command} {self.run_id} ({self.status})"


# =============================================================================
# RUN METRIC MODEL
# =============================================================================

class RunMetric(models.Model):
    """Aggregate result row, e.g. NMSE of one method at one SNR."""

    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name="metrics"
    )
    method = models.CharField(max_length=40)
    snr_db = models.FloatField(null=True, blank=True)
    k_param = models.IntegerField(null=True, blank=True)
    metric = models.CharField(max_length=40)
    value = models.FloatField()

    class Meta:
        ordering = ["id"]

    def __str__(self):
        return f"{self.run.run_id} {self.method} {self.metric}={self.value:.4g}"
