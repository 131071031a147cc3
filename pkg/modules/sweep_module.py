"""
Sweep Stage for tdh

Bias sweep of one board into a signature map plus the color-map,
fundamental-versus-bias and efficiency CSVs.
"""

import asyncio
import logging
import time
from pathlib import Path
from typing import Any, Dict

from base import BaseStage
from tdh.config import config_hash
from tdh.errors import TDHError
from tdh.io import provenance_comment, write_rows
from tdh.signature import (
    efficiency_curve,
    feature_vector,
    fundamental_jitter,
    save_map,
    sweep_bias,
    sweep_bias_async,
    write_colormap_csv,
    write_fundamentals_csv,
)
from tdh.spectral import peak_efficiency

logger = logging.getLogger(__name__)


class SweepStage(BaseStage):

    @property
    def name(self) -> str:
        return "sweep"

    @property
    def version(self) -> str:
        return "1.0.0"

    def run(self, config, outdir: str, **kwargs) -> Dict[str, Any]:
        """
        Args:
            config: RunConfig (the sweep section drives the bias grid)
            outdir: Output directory
            **kwargs: workers (int) overrides sweep.num_workers

        Returns:
            Dict with standardized stage results
        """
        start_time = time.time()
        output_dir = Path(outdir)
        output_dir.mkdir(parents=True, exist_ok=True)

        board = config.board_id
        chash = config_hash(config)
        sweep = config.sweep
        comment = provenance_comment(chash, sweep.seed)
        workers = kwargs.get("workers") or sweep.num_workers
        summary: Dict[str, Any] = {"board": board, "config_hash": chash, "seed": sweep.seed}
        artifacts = []
        success = False

        try:
            circuit = config.resolve_circuit()
            grid = sweep.bias_grid()
            logger.info(f"Sweeping {board}: {grid.size} rows {grid[0]:.3f}-{grid[-1]:.3f} V, {workers} worker(s)")

            if workers > 1:
                sig_map = asyncio.run(sweep_bias_async(circuit, sweep, board, config.simulation, chash, workers))
            else:
                sig_map = sweep_bias(circuit, sweep, board, config.simulation, chash)

            artifacts.append(str(save_map(sig_map, output_dir / "signature_map.json")))
            artifacts.append(str(write_colormap_csv(sig_map, output_dir / "colormap.csv", comment)))
            artifacts.append(str(write_fundamentals_csv(sig_map, output_dir / "fundamentals.csv",
                                                        sweep.noise_floor, comment)))
            curve = efficiency_curve(sig_map, sweep.noise_floor)
            artifacts.append(str(write_rows(output_dir / "efficiency.csv", ["bias_V", "efficiency"], curve, comment)))

            features = feature_vector(sig_map, sweep.noise_floor)
            onset_jitter, deep_jitter = fundamental_jitter(sig_map, sweep.noise_floor)
            summary.update({
                "rows": int(grid.size),
                "faulted_rows": list(sig_map.faulted_rows),
                "onset_bias_V": None if features[-1] < 0 else float(features[-1]),
                "tunable_range_Hz": float(features[-2]),
                "peak_efficiency": peak_efficiency(curve) if curve else None,
                "jitter_Hz": {"onset": onset_jitter, "deep": deep_jitter},
            })
            success = True
            logger.info(f"{board}: onset {summary['onset_bias_V']} V, tunable {summary['tunable_range_Hz'] / 1e6:.2f} MHz")

        except TDHError as e:
            summary["error"] = f"{type(e).__name__}: {e}"
            logger.error(summary["error"])
        except Exception as e:
            summary["error"] = f"Sweep failed: {e}"
            logger.error(summary["error"])

        return self._result(board, start_time, success, summary, artifacts)
