"""
tdh CLI - Tunnel-Diode Harmonic Signature Toolkit
"""

import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer

sys.path.insert(0, str(Path(__file__).parent.parent))

from modules import loader  # noqa: E402
from tdh.config import RunConfig, config_hash, load_config, with_overrides  # noqa: E402
from tdh.errors import ConfigError  # noqa: E402
from tdh.spectral import Window  # noqa: E402

# Configuration via environment variables
OUTPUT_DIR = os.getenv("OUTPUT_DIR", "./results")
NUM_WORKERS = int(os.getenv("TDH_NUM_WORKERS", "1"))
FINGERPRINT_DB = os.getenv("TDH_FINGERPRINT_DB", "./fingerprints.json")
REDIS_URL = os.getenv("REDIS_URL", "redis://localhost:6379")
QUEUE_NAME = os.getenv("QUEUE_NAME", "tdh_queue")

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

app = typer.Typer(help="Simulate tunnel-diode oscillator boards and work with their harmonic signatures.")
fingerprint_app = typer.Typer(help="Enroll, identify and tamper-check board fingerprints.")
app.add_typer(fingerprint_app, name="fingerprint")

ConfigOpt = typer.Option(None, "--config", help="TOML or JSON run configuration")
BoardOpt = typer.Option(None, "--board", help="Board preset (board1..board5, board1_squegging)")
BiasOpt = typer.Option(None, "--bias", help="Bias voltage in V")
SeedOpt = typer.Option(None, "--seed", help="Random seed")
OutOpt = typer.Option(None, "--out", help="Output directory")


def resolve_config(config_path: Optional[Path], overrides: Dict[str, Any]) -> RunConfig:
    """Load the file (or defaults) and apply CLI overrides; config errors exit 1."""
    try:
        config = load_config(config_path) if config_path else RunConfig()
        return with_overrides(config, overrides)
    except ConfigError as e:
        typer.echo(f"Configuration error: {e}", err=True)
        raise typer.Exit(1)


def common_overrides(board: Optional[str], bias: Optional[float], seed: Optional[int]) -> Dict[str, Any]:
    return {"board": board, "bias": bias, "seed": seed, "sweep.seed": seed}


def output_dir(config: RunConfig, out: Optional[Path]) -> Path:
    if out is not None:
        return out
    if config.output_dir != RunConfig.model_fields["output_dir"].default:
        return Path(config.output_dir)
    return Path(OUTPUT_DIR)


def run_stage(stage_name: str, config: RunConfig, out: Path, **kwargs) -> Dict[str, Any]:
    """
    Run one registered stage, write ``<out>/<stage>_report.json`` and echo the summary.

    A failed stage exits with status 1.
    """
    stage_class = loader.get_stage(stage_name)
    if stage_class is None:
        typer.echo(f"Stage '{stage_name}' is not available", err=True)
        raise typer.Exit(1)

    out.mkdir(parents=True, exist_ok=True)
    result = stage_class().run(config, str(out), **kwargs)
    report = out / f"{stage_name}_report.json"
    report.write_text(json.dumps(result, indent=2, default=str) + "\n")

    typer.echo(json.dumps(result["summary"], indent=2, default=str))
    if not result["success"]:
        typer.echo(f"{stage_name} failed: {result['summary'].get('error', 'unknown error')}", err=True)
        raise typer.Exit(1)
    return result


def enqueue_stage(stage_name: str, config: RunConfig, out: Path, **kwargs) -> str:
    """Queue a stage for the rq worker and return the job id."""
    from redis import Redis
    from rq import Queue

    queue = Queue(QUEUE_NAME, connection=Redis.from_url(REDIS_URL))
    job = queue.enqueue("worker.runner.run_stage", args=(stage_name, config.model_dump_json(), str(out)),
                        kwargs=kwargs, job_timeout=3600)
    logger.info(f"Job {job.id} queued: {stage_name} ({config_hash(config)})")
    return job.id


@app.command()
def simulate(
    config_path: Optional[Path] = ConfigOpt,
    board: Optional[str] = BoardOpt,
    bias: Optional[float] = BiasOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[Path] = OutOpt,
    window: Optional[Window] = typer.Option(None, help="Spectral window"),
    kurokawa: bool = typer.Option(False, help="Also report the large-signal stability check"),
):
    """
    Run one transient and write trace, spectrum, regime and harmonics
    """
    overrides = common_overrides(board, bias, seed)
    overrides["spectral.window"] = window.value if window else None
    config = resolve_config(config_path, overrides)
    run_stage("simulate", config, output_dir(config, out), kurokawa=kurokawa)


@app.command()
def sweep(
    config_path: Optional[Path] = ConfigOpt,
    board: Optional[str] = BoardOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[Path] = OutOpt,
    bias_start: Optional[float] = typer.Option(None, help="First bias point in V"),
    bias_stop: Optional[float] = typer.Option(None, help="Last bias point in V"),
    bias_step: Optional[float] = typer.Option(None, help="Bias step in V"),
    window: Optional[Window] = typer.Option(None, help="Spectral window"),
    workers: int = typer.Option(NUM_WORKERS, help="Parallel sweep workers (TDH_NUM_WORKERS)"),
    enqueue: bool = typer.Option(False, help="Queue the sweep for the rq worker instead of running it"),
):
    """
    Sweep the bias and write the signature map and color-map CSV
    """
    overrides = common_overrides(board, None, seed)
    overrides.update({
        "sweep.bias_start": bias_start,
        "sweep.bias_stop": bias_stop,
        "sweep.bias_step": bias_step,
        "sweep.window": window.value if window else None,
    })
    config = resolve_config(config_path, overrides)
    outdir = output_dir(config, out)

    if enqueue:
        job_id = enqueue_stage("sweep", config, outdir, workers=workers)
        typer.echo(f"Job queued with ID: {job_id}")
        return
    run_stage("sweep", config, outdir, workers=workers)


def _fingerprint(action: str, config_path, board, seed, out, db, maps, sweeps, board_id):
    config = resolve_config(config_path, common_overrides(board, None, seed))
    run_stage("fingerprint", config, output_dir(config, out), action=action, db_path=str(db),
              maps=[str(m) for m in maps] if maps else None, sweeps=sweeps, board_id=board_id)


DbOpt = typer.Option(Path(FINGERPRINT_DB), "--db", help="Fingerprint database (TDH_FINGERPRINT_DB)")
MapOpt = typer.Option(None, "--map", help="Signature map JSON; repeat for several")
BoardIdOpt = typer.Option(None, "--board-id", help="Identifier stored in the database")


@fingerprint_app.command()
def enroll(
    config_path: Optional[Path] = ConfigOpt,
    board: Optional[str] = BoardOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[Path] = OutOpt,
    db: Path = DbOpt,
    maps: Optional[List[Path]] = MapOpt,
    sweeps: Optional[int] = typer.Option(None, help="Sweeps to simulate when no --map is given"),
    board_id: Optional[str] = BoardIdOpt,
):
    """
    Enroll a board from saved maps or fresh simulated sweeps
    """
    _fingerprint("enroll", config_path, board, seed, out, db, maps, sweeps, board_id)


@fingerprint_app.command()
def identify(
    config_path: Optional[Path] = ConfigOpt,
    board: Optional[str] = BoardOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[Path] = OutOpt,
    db: Path = DbOpt,
    maps: Optional[List[Path]] = MapOpt,
):
    """
    Rank a query map against the database and write match_report.json
    """
    _fingerprint("identify", config_path, board, seed, out, db, maps, None, None)


@fingerprint_app.command()
def tamper(
    config_path: Optional[Path] = ConfigOpt,
    board: Optional[str] = BoardOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[Path] = OutOpt,
    db: Path = DbOpt,
    maps: Optional[List[Path]] = MapOpt,
    board_id: Optional[str] = BoardIdOpt,
):
    """
    Compare a fresh map with an enrolled board and flag modifications
    """
    _fingerprint("tamper", config_path, board, seed, out, db, maps, None, board_id)


@app.command()
def linkbudget(
    config_path: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    consumption: Optional[float] = typer.Option(None, help="Tag power consumption in W"),
    sensitivity: Optional[float] = typer.Option(None, help="Reader sensitivity in dBm"),
    harmonics_from: Optional[Path] = typer.Option(None, help="harmonics.json written by simulate"),
):
    """
    Compute reverse and forward link ranges and curves
    """
    config = resolve_config(config_path, {
        "link.forward.tag_consumption": consumption,
        "link.reverse.reader_sensitivity": sensitivity,
    })
    run_stage("linkbudget", config, output_dir(config, out),
              harmonics_from=str(harmonics_from) if harmonics_from else None)


@app.command()
def export(
    kind: str = typer.Argument(..., help="iv, colormap or config"),
    config_path: Optional[Path] = ConfigOpt,
    board: Optional[str] = BoardOpt,
    out: Optional[Path] = OutOpt,
    map_path: Optional[Path] = typer.Option(None, "--map", help="Signature map JSON for colormap"),
):
    """
    Export the IV curve, a color map or the resolved configuration
    """
    config = resolve_config(config_path, common_overrides(board, None, None))
    run_stage("export", config, output_dir(config, out), kind=kind,
              map_path=str(map_path) if map_path else None)


@app.command()
def stages():
    """
    List the discovered stages and any stage files that were skipped
    """
    names = loader.list_stages()
    if not names:
        typer.echo("No stages found")
    else:
        typer.echo("Stages:")
        for name in names:
            stage = loader.get_stage(name)()
            typer.echo(f"  - {name} v{stage.version} ({loader.sources[name]})")
    if loader.skipped:
        typer.echo("Skipped:")
        for filename, reason in loader.skipped.items():
            typer.echo(f"  - {filename}: {reason}")


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging")):
    """
    tdh - tunnel-diode harmonic signature toolkit
    """
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


if __name__ == "__main__":
    app()
