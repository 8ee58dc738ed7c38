"""
Command-line interface for the trimming estimator.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from diffusion_trim import config
from diffusion_trim.errors import DiffusionError
from diffusion_trim.pipeline import DiffusionPipeline, RunConfig

logger = logging.getLogger("diffusion_trim")


def _d_value(text: str) -> Optional[int]:
    if text.lower() in ("unbounded", "exact", "none"):
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"trimming value must be an integer or 'unbounded', got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"trimming value must be non-negative, got {value}")
    return value


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--villages_dir", type=str, default=config.VILLAGES_DIR,
                        help="Directory with the village manifest and data files")
    common.add_argument("--manifest", type=str, default=None,
                        help="Manifest file inside the villages directory (default: villages.json)")
    common.add_argument("--only-village", dest="villages", action="append", default=None,
                        help="Restrict to this village (repeatable)")
    common.add_argument("--periods", type=int, default=None,
                        help="Truncate outcome data / simulate this many periods (default: all / 4)")
    common.add_argument("--output_dir", type=str, default=config.OUTPUT_DIR,
                        help="Directory for output files")
    common.add_argument("--workers", type=int, default=config.DEFAULT_WORKERS,
                        help="Worker processes (default: $DIFFUSION_WORKERS or 1)")
    common.add_argument("--seed", dest="master_seed", type=int, default=config.DEFAULT_MASTER_SEED,
                        help="Master seed of all random draws")
    common.add_argument("--budget", type=int, default=config.DEFAULT_SCENARIO_BUDGET,
                        help="Refuse exact evaluation beyond this many prefix scenarios")
    common.add_argument("--log-level", dest="log_level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--grid-min", dest="grid_min", type=float, default=config.DEFAULT_GRID_MIN,
                      help="Smallest grid value of p and q")
    grid.add_argument("--grid-max", dest="grid_max", type=float, default=config.DEFAULT_GRID_MAX,
                      help="Largest grid value of p and q")
    grid.add_argument("--grid-step", dest="grid_step", type=float, default=config.DEFAULT_GRID_STEP,
                      help="Grid spacing")
    for axis in ("p", "q"):
        grid.add_argument(f"--{axis}-min", dest=f"{axis}_min", type=float, default=None,
                          help=f"Smallest grid value of {axis} (default: --grid-min)")
        grid.add_argument(f"--{axis}-max", dest=f"{axis}_max", type=float, default=None,
                          help=f"Largest grid value of {axis} (default: --grid-max)")
        grid.add_argument(f"--{axis}-step", dest=f"{axis}_step", type=float, default=None,
                          help=f"Grid spacing of {axis} (default: --grid-step)")
    grid.add_argument("--p-values", dest="p_values", type=_float_list, default=None,
                      help="Explicit comma-separated p axis")
    grid.add_argument("--q-values", dest="q_values", type=_float_list, default=None,
                      help="Explicit comma-separated q axis")
    grid.add_argument("--levels", type=_float_list, default=list(config.DEFAULT_CONFIDENCE_LEVELS),
                      help="Confidence levels of the LR sets")

    trimming = argparse.ArgumentParser(add_help=False)
    trimming.add_argument("--d", dest="d_values", type=_d_value, action="append", default=None,
                          help="Trimming value, or 'unbounded' for the exact likelihood (repeatable)")

    point = argparse.ArgumentParser(add_help=False)
    point.add_argument("--p", type=float, default=None, help="Participation probability")
    point.add_argument("--q", type=float, default=None, help="Transmission probability")

    study = argparse.ArgumentParser(add_help=False)
    study.add_argument("--case", choices=sorted(config.MC_CASES), default=None,
                       help="Named true parameter pair")
    study.add_argument("--N", dest="submatrix_size", type=int, default=config.MC_SUBMATRIX_SIZE,
                       help="Village size (submatrix rows)")
    study.add_argument("--villages", dest="n_villages", type=int, default=config.MC_VILLAGES,
                       help="Villages per sample")
    study.add_argument("--seed-s", dest="seed_s_start", type=int, default=config.MC_SEED_S_START,
                       help="First submatrix / injection-point seed")
    study.add_argument("--seed-d", dest="seed_d_start", type=int, default=config.MC_SEED_D_START,
                       help="First data seed")
    study.add_argument("--source", dest="sources", action="append", default=None,
                       help="Source network file (repeatable); surrogates are used when absent")
    study.add_argument("--surrogate", choices=["erdos-renyi", "watts-strogatz"], default="erdos-renyi",
                       help="Surrogate network generator")
    study.add_argument("--surrogate-size", dest="surrogate_size", type=int, default=40,
                       help="Nodes per surrogate source network")

    parser = argparse.ArgumentParser(description="Estimate network diffusion models with trimming")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common, point, study, grid],
                   help="Simulate one sample of villages with latent scenarios")
    estimate = sub.add_parser("estimate", parents=[common, grid, trimming],
                              help="Likelihood surfaces and estimates per trimming value")
    estimate.add_argument("--all-d", dest="all_d", action="store_true",
                          help="Estimate for d = 0..max d-bar of the sample")
    mc = sub.add_parser("mc", parents=[common, point, study, grid], help="Monte Carlo study")
    mc.add_argument("--replications", type=int, default=config.MC_REPLICATIONS, help="Replications")
    sub.add_parser("errcurve", parents=[common, point, trimming], help="Trimming error curves")
    sub.add_parser("audit", parents=[common, point, trimming], help="Audit first-exchange trimming choices")
    count = sub.add_parser("count-scenarios", parents=[common],
                           help="Number of reachable information scenarios of a network")
    count.add_argument("--network", type=str, required=True, help="Network file")
    count.add_argument("--ips", type=_int_list, required=True, help="Comma-separated 1-based injection points")
    count.add_argument("--exchanges", type=int, default=config.DEFAULT_PERIODS - 1,
                       help="Number of information exchanges")
    return parser


def to_run_config(args: argparse.Namespace) -> RunConfig:
    fields = set(RunConfig.__dataclass_fields__)
    values = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    if "levels" in values:
        values["levels"] = tuple(values["levels"])
    return RunConfig(**values)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        pipeline = DiffusionPipeline(to_run_config(args))
        pipeline.run()
    except DiffusionError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure")
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
