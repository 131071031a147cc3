"""
Worker runner for tdh.

Processes stage jobs queued on Redis (``tdh sweep --enqueue``), runs them
through the stage loader and writes the stage report next to the outputs.
"""

import json
import logging
import os
import signal
import sys
import time
from pathlib import Path
from typing import Any, Dict

from redis import Redis
from rq import Connection, Queue, Worker, get_current_job

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from tdh.config import RunConfig  # noqa: E402

# Configuration
REDIS_URL = os.getenv("REDIS_URL", "redis://localhost:6379")
QUEUE_NAME = os.getenv("QUEUE_NAME", "tdh_queue")

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Graceful shutdown flag
shutdown_requested = False


def signal_handler(signum, frame):
    """Handle shutdown signals gracefully."""
    global shutdown_requested
    logger.info(f"Received signal {signum}, requesting graceful shutdown...")
    shutdown_requested = True


def run_stage(stage_name: str, config_json: str, outdir: str, **kwargs) -> Dict[str, Any]:
    """
    Execute one queued stage.

    Args:
        stage_name: Registered stage name (e.g. 'sweep')
        config_json: RunConfig serialized with ``model_dump_json``
        outdir: Output directory
        **kwargs: Stage-specific options

    Returns:
        The stage result dict

    Raises:
        RuntimeError: if the stage is unknown or reports failure, so rq marks the job failed
    """
    from modules import loader

    job = get_current_job()
    job_id = job.id if job is not None else "local"
    logger.info(f"Starting job {job_id}: {stage_name} -> {outdir}")

    stage_class = loader.get_stage(stage_name)
    if stage_class is None:
        raise RuntimeError(f"Unknown stage '{stage_name}'")

    config = RunConfig.model_validate_json(config_json)
    result = stage_class().run(config, outdir, **kwargs)

    Path(outdir).mkdir(parents=True, exist_ok=True)
    (Path(outdir) / f"{stage_name}_report.json").write_text(json.dumps(result, indent=2, default=str) + "\n")

    if not result["success"]:
        logger.error(f"Job {job_id} failed: {result['summary'].get('error')}")
        raise RuntimeError(result["summary"].get("error", f"{stage_name} failed"))

    logger.info(f"Job {job_id} completed successfully: {stage_name}")
    return result


def main():
    """Main worker function with graceful shutdown."""
    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)

    logger.info("Starting tdh worker...")
    redis_conn = Redis.from_url(REDIS_URL)

    with Connection(redis_conn):
        worker = Worker(
            [Queue(QUEUE_NAME, connection=redis_conn)],
            connection=redis_conn,
            name=f"tdh-worker-{os.getpid()}",
            default_result_ttl=86400,
        )
        logger.info(f"Worker {worker.name} listening on queue '{QUEUE_NAME}'")

        while not shutdown_requested:
            try:
                worker.work(burst=True, max_jobs=1)
                time.sleep(1)
            except Exception as e:
                logger.error(f"Worker error: {e}")
                if shutdown_requested:
                    break
                time.sleep(5)

        logger.info("Worker shutting down gracefully...")


if __name__ == "__main__":
    main()
