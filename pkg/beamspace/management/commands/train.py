from beamspace import experiments
from beamspace.config import with_overrides

from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = "Train one UTRR model per configured top-K parameter"

    def add_command_arguments(self, parser):
        parser.add_argument("--dataset", required=True, help="Directory written by gen_data")
        parser.add_argument("--layers", type=int, help="Number of unfolded layers L")
        parser.add_argument(
            "--no-rcc",
            action="store_true",
            help="Keep the top-K term in every layer instead of the last one only",
        )

    def run(self, options):
        cfg = experiments.config_for(options["config"], options["dataset"])

        overrides = {}
        if options["layers"] is not None:
            overrides["n_layers"] = options["layers"]
        if options["no_rcc"]:
            overrides["rcc"] = False
        cfg = with_overrides(cfg, **overrides)

        return experiments.train(
            cfg,
            self.seed(options, cfg),
            options["dataset"],
            out_dir=options["out"],
            threads=self.threads(options),
            timing=not options["no_timing"],
            xlsx=options["xlsx"],
        )
