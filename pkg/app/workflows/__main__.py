"""
Main entry point for workflows package.

Runs one workflow once with settings from the environment, e.g.
``python -m app.workflows bench --swarm-sizes 1,2,3``.
"""

import argparse
import asyncio
import logging
import sys

from ..config import settings
from .approx import ApproxConfig, run_approx
from .bench import BenchConfig, run_bench
from .evaluate import EvaluateConfig, run_evaluate
from .scenario import ScenarioConfig, run_scenario


def setup_logging(level: str = "INFO"):
    """Set up logging configuration."""
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


async def run_workflow(args):
    """Run a specific workflow once."""
    session = settings.session_config(args.seed)
    if args.workflow == "bench":
        config = BenchConfig(
            swarm_sizes=[int(s) for s in args.swarm_sizes.split(",")],
            reps=args.reps, seed=session.seed, model_path=args.model or settings.model_path,
            model=settings.model_settings(), session=session, out=args.out,
        )
        result = await run_bench(config)
        summary = {"rows": len(result["rows"]), "comm_fit": result["comm_fit"], "out": result["out"]}
    elif args.workflow == "scenario":
        config = ScenarioConfig(
            scenarios=args.scenario, mode=args.mode, model_path=args.model or settings.model_path,
            model=settings.model_settings(), session=session, out=args.out,
        )
        result = await run_scenario(config)
        summary = {r.scenario: round(r.reward, 4) for r in result["reports"]}
    elif args.workflow == "approx":
        config = ApproxConfig(functions=args.functions.split(","), session=session, out=args.out)
        result = await run_approx(config)
        summary = result["summary"][["function", "max_error", "mpc_rounds", "baseline_rounds"]].to_dict("records")
    elif args.workflow == "evaluate":
        config = EvaluateConfig(
            dataset=args.dataset, mode=args.mode, model_path=args.model or settings.model_path,
            model=settings.model_settings(), session=session, v_max=settings.v_max, out=args.out,
        )
        summary = (await asyncio.to_thread(run_evaluate, config))["summary"]
    else:
        raise ValueError(f"Unknown workflow: {args.workflow}")
    print(f"Workflow '{args.workflow}' completed: {summary}")


def main():
    """Main entry point for the workflows CLI."""
    parser = argparse.ArgumentParser(description="Secure swarm-command workflows")
    parser.add_argument("workflow", choices=["bench", "scenario", "approx", "evaluate"], help="Workflow to run")
    parser.add_argument("--model", help="Weight file (default: seeded toy model)")
    parser.add_argument("--seed", type=int, default=None, help="Session seed")
    parser.add_argument("--out", help="CSV output path")
    parser.add_argument("--swarm-sizes", default="1,2,3,4,5,6,7,8", help="Comma-separated swarm sizes")
    parser.add_argument("--reps", type=int, default=3, help="Repetitions per swarm size")
    parser.add_argument("--scenario", action="append", default=[], help="Scenario file (repeatable)")
    parser.add_argument("--dataset", help="Sensor/command TSV file (evaluate)")
    parser.add_argument("--mode", choices=["encrypted", "plaintext", "scripted"], default="encrypted")
    parser.add_argument("--functions", default="gelu,softmax,exp,reciprocal,rsqrt")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=settings.log_level)
    args = parser.parse_args()

    setup_logging(args.log_level)
    try:
        asyncio.run(run_workflow(args))
    except KeyboardInterrupt:
        print("Interrupted by user")
        return 0
    except Exception as e:
        print(f"Error: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
