from django.core.management.base import CommandError

from beamspace import experiments
from beamspace.sensing import NOISELESS

from ._base import WorkbenchCommand


def parse_snr_list(text: str):
    """'0, 10, 20, noiseless' -> [0.0, 10.0, 20.0, 'noiseless']."""
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if part == NOISELESS:
            values.append(NOISELESS)
            continue
        try:
            values.append(float(part))
        except ValueError:
            raise CommandError(f"--snr: '{part}' is neither a number nor '{NOISELESS}'")
    if not values:
        raise CommandError("--snr needs at least one value")
    return values


class Command(WorkbenchCommand):
    help = "NMSE versus SNR: re-observe the test channels at each SNR and score every method"

    def add_command_arguments(self, parser):
        parser.add_argument("--snr", required=True, help=f"Comma-separated dB values; '{NOISELESS}' allowed")
        parser.add_argument("--models", help="Directory of trained models for utrr / utrr-ensemble rows")

    def run(self, options):
        cfg = experiments.config_for(options["config"])
        return experiments.sweep_snr(
            cfg,
            self.seed(options, cfg),
            parse_snr_list(options["snr"]),
            models_dir=options["models"],
            out_dir=options["out"],
            threads=self.threads(options),
            timing=not options["no_timing"],
            xlsx=options["xlsx"],
        )
