from beamspace import experiments

from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = "Score trained UTRR models: NMSE, accurate-reconstruction ratio, ZF sum rate"

    def add_command_arguments(self, parser):
        parser.add_argument("--models", required=True, help="Directory holding utrr_k*.bin files")
        parser.add_argument("--dataset", required=True, help="Directory written by gen_data")
        parser.add_argument("--mode", choices=["single", "ensemble"], default="single")
        parser.add_argument(
            "--thresholds",
            type=float,
            nargs="+",
            help="Accurate-reconstruction thresholds (default: the config's list)",
        )
        parser.add_argument(
            "--measurements",
            type=int,
            help="Expected M; must match the dataset",
        )

    def run(self, options):
        cfg = experiments.config_for(options["config"], options["dataset"])
        return experiments.evaluate(
            cfg,
            self.seed(options, cfg),
            options["models"],
            options["dataset"],
            mode=options["mode"],
            thresholds=options["thresholds"],
            measurements=options["measurements"],
            out_dir=options["out"],
            threads=self.threads(options),
            timing=not options["no_timing"],
            xlsx=options["xlsx"],
        )
