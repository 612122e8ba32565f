"""CLI for the secure swarm-command engine."""

import asyncio
import logging
from typing import List, Optional

import typer

from .config import Settings, settings
from .core.errors import SwarmMPCError
from .core.types import AdderKind, MulBackend

app = typer.Typer(help="Three-party secure transformer inference for UAV swarm command")


def setup_logging(level: str = "INFO"):
    """Set up logging configuration."""
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def _settings(fbits: Optional[int], temp: Optional[float], transport: Optional[str], listen: Optional[str],
              connect: Optional[str], seed: Optional[int], gelu: Optional[str], adder: Optional[AdderKind],
              backend: Optional[MulBackend]) -> Settings:
    overrides = {
        "fractional_bits": fbits, "temperature": temp, "transport": transport, "listen": listen,
        "connect": connect, "seed": seed, "gelu": gelu, "adder": adder, "mul_backend": backend,
    }
    merged = settings.model_dump()
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return Settings(**merged)


def _fail(exc: Exception) -> None:
    typer.echo(f"Error: {exc}", err=True)
    raise typer.Exit(code=1)


FBITS = typer.Option(None, "--fbits", help="Fractional bits (8..32)")
TEMP = typer.Option(None, "--temp", help="Softmax temperature")
TRANSPORT = typer.Option(None, "--transport", help="local or tcp")
LISTEN = typer.Option(None, "--listen", help="host:port the parties bind (tcp)")
CONNECT = typer.Option(None, "--connect", help="host:port the parties dial (tcp)")
SEED = typer.Option(None, "--seed", help="Session seed")
GELU = typer.Option(None, "--gelu", help="paper (piecewise) or exact")
ADDER = typer.Option(None, "--adder", help="Comparison adder")
BACKEND = typer.Option(None, "--backend", help="Multiplication backend")


@app.command()
def bench(
    swarm_sizes: str = typer.Option("1,2,3,4,5,6,7,8", "--swarm-sizes", help="Comma-separated swarm sizes"),
    reps: int = typer.Option(3, "--reps", help="Repetitions per size"),
    model: Optional[str] = typer.Option(None, "--model", help="Weight file (default: seeded toy model)"),
    out: Optional[str] = typer.Option(None, "--out", help="CSV output path"),
    db: Optional[str] = typer.Option(None, "--db", help="Record rows in this database"),
    fbits: Optional[int] = FBITS, temp: Optional[float] = TEMP, transport: Optional[str] = TRANSPORT,
    listen: Optional[str] = LISTEN, connect: Optional[str] = CONNECT, seed: Optional[int] = SEED,
    gelu: Optional[str] = GELU, adder: Optional[AdderKind] = ADDER, backend: Optional[MulBackend] = BACKEND,
):
    """Encrypted inference cost versus swarm size."""
    from .workflows.bench import REPORTED_COSTS, BenchConfig, run_bench

    try:
        cfg = _settings(fbits, temp, transport, listen, connect, seed, gelu, adder, backend)
        setup_logging(cfg.log_level)
        sizes = [int(s) for s in swarm_sizes.split(",") if s.strip()]
        config = BenchConfig(swarm_sizes=sizes, reps=reps, seed=cfg.seed, model_path=model or cfg.model_path,
                             model=cfg.model_settings(), session=cfg.session_config(), out=out, database_url=db)
        result = asyncio.run(run_bench(config))
    except (SwarmMPCError, ValueError) as exc:
        _fail(exc)
    typer.echo(f"{'size':>4} {'ms':>10} {'KB':>10} {'rounds':>7}")
    for row in result["rows"]:
        typer.echo(f"{row.swarm_size:>4} {row.computation_ms:>10.1f} {row.comm_kb_total:>10.1f} {row.rounds:>7}")
    typer.echo(f"comm KB vs size: slope {result['comm_fit']['slope']:.1f}, R^2 {result['comm_fit']['r2']:.6f}")
    typer.echo("paper-reported (GPT-2, different hardware; context only, not an acceptance target):")
    for size, (ms, kb) in REPORTED_COSTS.items():
        typer.echo(f"{size:>4} {ms:>10.2f} {kb:>10.1f}")


@app.command()
def scenario(
    paths: List[str] = typer.Argument(..., help="Scenario JSON files"),
    mode: str = typer.Option("encrypted", "--mode", help="encrypted, plaintext or scripted"),
    model: Optional[str] = typer.Option(None, "--model", help="Weight file (default: seeded toy model)"),
    out: Optional[str] = typer.Option(None, "--out", help="CSV output path"),
    db: Optional[str] = typer.Option(None, "--db", help="Record reports in this database"),
    fbits: Optional[int] = FBITS, temp: Optional[float] = TEMP, transport: Optional[str] = TRANSPORT,
    listen: Optional[str] = LISTEN, connect: Optional[str] = CONNECT, seed: Optional[int] = SEED,
    gelu: Optional[str] = GELU, adder: Optional[AdderKind] = ADDER, backend: Optional[MulBackend] = BACKEND,
):
    """Sensor reports to commands to simulated flight, scored."""
    from .workflows.scenario import ScenarioConfig, run_scenario

    try:
        cfg = _settings(fbits, temp, transport, listen, connect, seed, gelu, adder, backend)
        setup_logging(cfg.log_level)
        config = ScenarioConfig(scenarios=list(paths), mode=mode, model_path=model or cfg.model_path,
                                model=cfg.model_settings(), session=cfg.session_config(), out=out,
                                database_url=db)
        result = asyncio.run(run_scenario(config))
    except (SwarmMPCError, ValueError) as exc:
        _fail(exc)
    for report in result["reports"]:
        f = report.formation
        typer.echo(f"{report.scenario} [{report.mode}] similarity={report.similarity:.3f} "
                   f"trajectory_error={f.trajectory_error:.3f} formation_rms={f.formation_rms:.3f} "
                   f"avoidance={f.avoidance_success:.2f} reward={report.reward:.3f} comm={report.comm_kb:.1f}KB")
        for text in report.commands:
            typer.echo(f"    {text}")


@app.command()
def approx(
    function: List[str] = typer.Option(["gelu", "softmax", "exp", "reciprocal", "rsqrt"], "--function",
                                       help="Function to report (repeatable)"),
    lo: Optional[float] = typer.Option(None, "--lo", help="Domain lower end"),
    hi: Optional[float] = typer.Option(None, "--hi", help="Domain upper end"),
    step: Optional[float] = typer.Option(None, "--step", help="Grid step"),
    out: Optional[str] = typer.Option(None, "--out", help="Summary CSV path (profiles go alongside)"),
    fbits: Optional[int] = FBITS, seed: Optional[int] = SEED,
    adder: AdderKind = typer.Option(AdderKind.KOGGE_STONE, "--adder", help="Comparison adder"),
):
    """Accuracy and round cost of the secure nonlinearities."""
    from .workflows.approx import ApproxConfig, run_approx

    domain = (lo, hi) if lo is not None and hi is not None else None
    try:
        cfg = _settings(fbits, None, None, None, None, seed, None, adder, None)
        setup_logging(cfg.log_level)
        config = ApproxConfig(functions=list(function), domain=domain, step=step,
                              session=cfg.session_config(), out=out)
        result = asyncio.run(run_approx(config))
    except (SwarmMPCError, ValueError) as exc:
        _fail(exc)
    columns = ["function", "max_error", "mean_error", "mpc_rounds", "baseline_rounds", "time_reduction"]
    typer.echo(result["summary"][columns].to_string(index=False))


@app.command()
def infer(
    report: str = typer.Argument(..., help="Sensor report text"),
    mode: str = typer.Option("encrypted", "--mode", help="encrypted or plaintext"),
    model: Optional[str] = typer.Option(None, "--model", help="Weight file (default: seeded toy model)"),
    shared_weights: bool = typer.Option(False, "--shared-weights", help="Secret-share the weights too"),
    fbits: Optional[int] = FBITS, temp: Optional[float] = TEMP, transport: Optional[str] = TRANSPORT,
    listen: Optional[str] = LISTEN, connect: Optional[str] = CONNECT, seed: Optional[int] = SEED,
    gelu: Optional[str] = GELU, adder: Optional[AdderKind] = ADDER, backend: Optional[MulBackend] = BACKEND,
):
    """Generate one command from a sensor report."""
    from .adapters.weights import resolve_model
    from .agents.commander import CommandAgent

    try:
        cfg = _settings(fbits, temp, transport, listen, connect, seed, gelu, adder, backend)
        setup_logging(cfg.log_level)
        weights = resolve_model(model or cfg.model_path, cfg.model_settings())
        agent = CommandAgent(weights, mode=mode, session_config=cfg.session_config(), v_max=cfg.v_max,
                             shared_weights=shared_weights)
        (generation,) = agent.run([report])
        typer.echo(generation.text)
        typer.echo(f"  ast: {generation.parse(cfg.v_max).model_dump(mode='json')}")
    except (SwarmMPCError, ValueError) as exc:
        _fail(exc)
    if generation.comm is not None:
        typer.echo(f"  {generation.latency_ms:.1f} ms, {generation.comm.total_kb:.1f} KB, "
                   f"{generation.comm.rounds} rounds")


@app.command()
def evaluate(
    dataset: str = typer.Argument(..., help="Tab-separated sensor/command file"),
    mode: str = typer.Option("plaintext", "--mode", help="encrypted or plaintext"),
    limit: Optional[int] = typer.Option(None, "--limit", help="Use only the first N records"),
    model: Optional[str] = typer.Option(None, "--model", help="Weight file (default: seeded toy model)"),
    out: Optional[str] = typer.Option(None, "--out", help="Per-record CSV path"),
    fbits: Optional[int] = FBITS, temp: Optional[float] = TEMP, seed: Optional[int] = SEED,
    gelu: Optional[str] = GELU, adder: Optional[AdderKind] = ADDER,
):
    """Command similarity of generated commands against a dataset."""
    from .workflows.evaluate import EvaluateConfig, run_evaluate

    try:
        cfg = _settings(fbits, temp, None, None, None, seed, gelu, adder, None)
        setup_logging(cfg.log_level)
        config = EvaluateConfig(dataset=dataset, mode=mode, limit=limit, model_path=model or cfg.model_path,
                                model=cfg.model_settings(), session=cfg.session_config(), v_max=cfg.v_max,
                                out=out)
        result = run_evaluate(config)
    except (SwarmMPCError, ValueError) as exc:
        _fail(exc)
    summary = result["summary"]
    typer.echo(f"records={summary['records']} similarity={summary['mean_similarity']:.3f} "
               f"parse_rate={summary['parse_rate']:.2f}")


@app.command()
def init_db(db: Optional[str] = typer.Option(None, "--db", help="Database URL (default: SWARM_DB_URL)")):
    """Initialize the run-ledger tables."""
    from .core.store import Store

    store = Store(db) if db else Store(settings.db_url)
    store.create_all()
    typer.echo(f"Database initialized at {store.engine.url}")


if __name__ == "__main__":
    app()
