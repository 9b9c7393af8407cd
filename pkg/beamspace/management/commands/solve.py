from beamspace import experiments
from beamspace.forms import SOLVER_NAMES

from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = "Run one iterative estimator over the test split of a dataset"

    def add_command_arguments(self, parser):
        parser.add_argument("--dataset", required=True, help="Directory written by gen_data")
        parser.add_argument(
            "--solver",
            help=f"One of: {', '.join(SOLVER_NAMES)} (default: the config's solver)",
        )

    def run(self, options):
        cfg = experiments.config_for(options["config"], options["dataset"])
        return experiments.solve(
            cfg,
            self.seed(options, cfg),
            options["dataset"],
            options["solver"] or cfg.solver,
            out_dir=options["out"],
            threads=self.threads(options),
            timing=not options["no_timing"],
            xlsx=options["xlsx"],
        )
