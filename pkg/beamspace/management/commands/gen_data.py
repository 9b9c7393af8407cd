from beamspace import experiments

from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = "Generate train/val/test datasets (dataset.trrd) from a config"

    writes_tables = False

    def run(self, options):
        cfg = experiments.config_for(options["config"])
        return experiments.gen_data(
            cfg,
            self.seed(options, cfg),
            out_dir=options["out"],
            threads=self.threads(options),
        )
