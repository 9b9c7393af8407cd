"""Shared options and error handling for the workbench commands."""

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from beamspace.config import resolve_seed
from beamspace.exceptions import WorkbenchError


class WorkbenchCommand(BaseCommand):
    """
    Adds --config, --seed, --out and --threads; commands that write CSV
    tables also get --xlsx and --no-timing.

    Subclasses implement run(options) and return a RunArtifact.
    """

    writes_tables = True

    def add_arguments(self, parser):
        parser.add_argument("--config", help="Config file, or the name of a preset under presets/")
        parser.add_argument("--seed", type=int, help="Master seed (overrides TRR_SEED and the config)")
        parser.add_argument("--out", help="Artifact directory (default: TRR_RUNS_DIR/<command>-<run id>)")
        parser.add_argument("--threads", type=int, help="Worker threads for sample-parallel sections")
        if self.writes_tables:
            parser.add_argument("--xlsx", action="store_true", help="Also write report.xlsx")
            parser.add_argument("--no-timing", action="store_true", help="Write wall_ms = 0 (byte-identical CSVs)")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def threads(self, options) -> int:
        threads = options.get("threads") or settings.TRR_THREADS
        if threads < 1:
            raise CommandError("--threads must be >= 1")
        return threads

    def seed(self, options, cfg) -> int:
        return resolve_seed(options.get("seed"), cfg)

    def handle(self, *args, **options):
        try:
            run = self.run(options)
        except WorkbenchError as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}")

        for line in run.summary:
            self.stdout.write(line)
        self.stdout.write(self.style.SUCCESS(f"[OK] {run.command} {run.run_id} -> {run.out_dir}"))

    def run(self, options):
        raise NotImplementedError
