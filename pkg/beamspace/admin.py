"""
=============================================================================
Run Registry Admin
=============================================================================

- ExperimentRunAdmin : Browse runs by command and status, metrics inline
- RunMetricAdmin     : Filter aggregate results by method and metric

Author: TRR Workbench Team
=============================================================================
"""

from django.contrib import admin

from .models import ExperimentRun, RunMetric


class RunMetricInline(admin.TabularInline):
    model = RunMetric
    extra = 0
    readonly_fields = ("method", "snr_db", "k_param", "metric", "value")
    can_delete = False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    """Admin interface for ExperimentRun model."""

    list_display = ("run_id", "command", "seed", "status", "wall_seconds", "created_at")
    list_filter = ("command", "status", "created_at")
    search_fields = ("run_id", "output_dir", "message")
    readonly_fields = ("run_id", "created_at", "finished_at")
    ordering = ("-created_at",)
    inlines = [RunMetricInline]

    fieldsets = (
        ("Run", {
            "fields": ("run_id", "command", "seed", "output_dir", "status", "message")
        }),
        ("Configuration", {
            "fields": ("config_snapshot",),
            "classes": ("collapse",)
        }),
        ("Timestamps", {
            "fields": ("created_at", "finished_at", "wall_seconds"),
            "classes": ("collapse",)
        }),
    )


@admin.register(RunMetric)
class RunMetricAdmin(admin.ModelAdmin):
    list_display = ("run", "method", "metric", "value", "snr_db", "k_param")
    list_filter = ("method", "metric")
    search_fields = ("run__run_id", "method")
    raw_id_fields = ("run",)
