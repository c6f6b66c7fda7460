"""
Command-line driver.

    python app.py simulate --seed 1 --sigma1 1 --output-dir sim
    python app.py fit --expression sim/expression.tsv --clinical sim/outcome.tsv --output-dir fit
    python app.py evaluate --runs fit --truth sim/truth.json --expression sim/expression.tsv

Exit codes: 0 success, 1 usage or configuration error, 2 data/validation error,
3 numerical failure.
"""

import argparse
import logging
import sys
from dataclasses import fields

import numpy as np

from src.errors import ClusteringError
from src.services import pipeline
from src.services.config import SWEEP_AXES, RunConfig

logger = logging.getLogger("app")

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

COMMON = ["seed", "output_dir", "workers"]
SIMULATION = [
    "n_subtypes", "subjects_per_cluster_mean", "n_modules", "module_size_mean", "n_confounders",
    "modules_per_confounder", "n_noise", "sigma0", "sigma1", "sigma2", "sigma3", "wishart_nu", "wishart_phi_mix",
]
INPUTS = ["expression", "clinical", "outcome_kind", "outcome_column", "time_column", "event_column",
          "guidance_statistic", "filter_fraction"]
PRIORS = [
    "c", "a_p", "b_p", "a_sigma", "b_sigma", "a_tau_mu0", "b_tau_mu0", "a_tau_mu1", "b_tau_mu1",
    "a_tau_u0", "b_tau_u0", "a_tau_u1", "b_tau_u1",
]
SAMPLER = ["k", "nt", "nb", "thin", "keep_draws", "no_guidance", "guidance", "fdr", "top_m", "bic_penalty"]

CHOICES = {
    "outcome_kind": ["continuous", "binary", "ordinal", "survival"],
    "guidance_statistic": ["r2", "abs_rho"],
    "bic_penalty": ["genes", "samples"],
    "sweep_axis": sorted(SWEEP_AXES),
}


class UsageExitParser(argparse.ArgumentParser):
    """argparse parser that exits with status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_fields(parser, names):
    types = {f.name: f.type for f in fields(RunConfig)}
    for name in names:
        flag = "--" + name.replace("_", "-")
        if types[name] is bool:
            parser.add_argument(flag, dest=name, action="store_const", const=True, default=None)
        else:
            parser.add_argument(flag, dest=name, type=types[name], default=None, choices=CHOICES.get(name))


def build_parser() -> argparse.ArgumentParser:
    parser = UsageExitParser(prog="app.py", description="Outcome-guided sparse Bayesian clustering")
    parser.add_argument("--config", help="KEY=VALUE config file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging and tracebacks")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only, no progress bar")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageExitParser)

    simulate = sub.add_parser("simulate", help="generate a synthetic benchmark dataset")
    _add_fields(simulate, COMMON + SIMULATION + ["outcome_column"])

    guidance = sub.add_parser("guidance", help="compute the per-gene guidance vector")
    _add_fields(guidance, COMMON + INPUTS)

    fit = sub.add_parser("fit", help="run the Gibbs sampler and make gene/cluster decisions")
    _add_fields(fit, COMMON + INPUTS + PRIORS + SAMPLER + ["reference_labels"])

    select_k = sub.add_parser("select-k", help="choose K by minimum BIC")
    _add_fields(select_k, COMMON + INPUTS + PRIORS + SAMPLER + ["k_min", "k_max"])

    evaluate = sub.add_parser("evaluate", help="score fit directories against truth")
    _add_fields(evaluate, COMMON + ["runs", "truth", "expression", "filter_fraction", "clinical", "outcome_kind",
                               "time_column", "event_column"])

    sweep = sub.add_parser("sweep", help="hyper-parameter sensitivity sweep on a simulated dataset")
    _add_fields(sweep, COMMON + SIMULATION + PRIORS + SAMPLER
                + ["guidance_statistic", "sweep_axis", "sweep_points", "sweep_low", "sweep_high"])

    replicates = sub.add_parser("replicates", help="seeded simulate/fit/evaluate replicates, guided and unguided")
    _add_fields(replicates, COMMON + SIMULATION + PRIORS + SAMPLER + ["guidance_statistic", "replicates"])
    return parser


COMMANDS = {
    "simulate": pipeline.cmd_simulate,
    "guidance": pipeline.cmd_guidance,
    "fit": pipeline.cmd_fit,
    "select-k": pipeline.cmd_select_k,
    "evaluate": pipeline.cmd_evaluate,
    "sweep": pipeline.cmd_sweep,
    "replicates": pipeline.cmd_replicates,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)

    overrides = {k: v for k, v in vars(args).items() if k in RunConfig.field_names() and v is not None}
    try:
        cfg = RunConfig.resolve(args.config, overrides)
        if args.command == "fit":
            pipeline.cmd_fit(cfg, progress=not args.quiet)
        else:
            COMMANDS[args.command](cfg)
    except ClusteringError as exc:
        logger.error("%s", exc, exc_info=args.verbose)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O failure: %s", exc, exc_info=args.verbose)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        logger.error("numerical failure: %s", exc, exc_info=args.verbose)
        return 3
    return 0


# Run the CLI
if __name__ == "__main__":
    sys.exit(main())
