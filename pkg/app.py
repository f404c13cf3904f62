# app.py

import argparse
import logging
import sys

from core.pipeline_flow import (
    cmd_bmu,
    cmd_diagnose,
    cmd_hbi,
    cmd_learn,
    cmd_propagate,
    cmd_simulate,
    cmd_verify,
)
from core.state import load_run_config
from pde_discovery.errors import NonConvergenceError, PdeDiscoveryError

logger = logging.getLogger("pde_discovery.app")


# ==========================================================
# 🧭 ARGUMENTS
# ==========================================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pde-discovery",
        description="Discover PDEs from noisy field data and quantify their uncertainty.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults are used when omitted)")
    common.add_argument("--seed", type=int, help="override the root seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--jobs", type=int, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write clean and noisy datasets")
    p.add_argument("--population", action="store_true", help="generate the hierarchical test population")

    p = sub.add_parser("learn", parents=[common], help="learn a sparse PDE from a dataset")
    p.add_argument("dataset")
    p.add_argument("--clean", help="clean reference for denoiser residual statistics")

    p = sub.add_parser("bmu", parents=[common], help="update learned coefficients against raw data")
    p.add_argument("model_report")
    p.add_argument("dataset")

    p = sub.add_parser("propagate", parents=[common], help="predictive envelope at a section")
    p.add_argument("posterior")
    p.add_argument("dataset")
    p.add_argument("--truth", help="clean field used for the initial condition and coverage")

    p = sub.add_parser("diagnose", parents=[common], help="coefficient shift between two systems")
    p.add_argument("report_a")
    p.add_argument("report_b")

    p = sub.add_parser("hbi", parents=[common], help="hierarchical inference over a population manifest")
    p.add_argument("manifest")
    p.add_argument("--model-report", help="model form and starting values (learned from the first dataset if omitted)")

    sub.add_parser("verify", parents=[common], help="run the acceptance test suite")
    return parser


# ==========================================================
# 🚦 CONVERGENCE → EXIT STATUS
# ==========================================================
def _check_converged(result):
    flagged = getattr(result, "flagged", False)
    converged = getattr(result, "converged", True)
    if not converged:
        raise NonConvergenceError(f"{type(result).__name__} did not converge; see the report for details.")
    if flagged:
        raise NonConvergenceError("More than 10% of posterior draws were unstable; the envelope is flagged.")


# ==========================================================
# 🚀 MAIN
# ==========================================================
def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )

    if args.command == "verify":
        return cmd_verify()

    try:
        config = load_run_config(args.config, seed=args.seed, out=args.out, jobs=args.jobs)
        if args.command == "simulate":
            flow = cmd_simulate(config, population=args.population)
        elif args.command == "learn":
            flow = cmd_learn(config, args.dataset, clean=args.clean)
        elif args.command == "bmu":
            flow = cmd_bmu(config, args.model_report, args.dataset)
        elif args.command == "propagate":
            flow = cmd_propagate(config, args.posterior, args.dataset, truth=args.truth)
        elif args.command == "diagnose":
            flow = cmd_diagnose(config, args.report_a, args.report_b)
        else:
            flow = cmd_hbi(config, args.manifest, model_report=args.model_report)

        for path in flow.paths:
            print(path)
        _check_converged(flow.result)
    except PdeDiscoveryError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
