"""
Export Stage for tdh

Writes the diode IV curve, a color-map CSV from a saved map, or the
resolved run configuration.
"""

import logging
import time
from pathlib import Path
from typing import Any, Dict

from base import BaseStage
from tdh.config import canonical_json, config_hash
from tdh.diode_model import sample_iv_curve, write_iv_csv
from tdh.errors import InvalidInput, TDHError
from tdh.io import provenance_comment
from tdh.signature import load_map, write_colormap_csv

logger = logging.getLogger(__name__)

KINDS = ("iv", "colormap", "config")


class ExportStage(BaseStage):

    @property
    def name(self) -> str:
        return "export"

    @property
    def version(self) -> str:
        return "1.0.0"

    def run(self, config, outdir: str, **kwargs) -> Dict[str, Any]:
        """
        Args:
            config: RunConfig
            outdir: Output directory
            **kwargs: kind ('iv' | 'colormap' | 'config'), map_path for colormap

        Returns:
            Dict with standardized stage results
        """
        start_time = time.time()
        output_dir = Path(outdir)
        output_dir.mkdir(parents=True, exist_ok=True)

        kind = kwargs.get("kind", "config")
        chash = config_hash(config)
        comment = provenance_comment(chash, config.seed)
        summary: Dict[str, Any] = {"kind": kind, "config_hash": chash}
        artifacts = []
        success = False

        try:
            if kind == "iv":
                curve = sample_iv_curve(config.resolve_circuit().diode)
                artifacts.append(str(write_iv_csv(curve, output_dir / "iv_curve.csv", comment)))
                summary["points"] = len(curve)
            elif kind == "colormap":
                if not kwargs.get("map_path"):
                    raise InvalidInput("colormap export needs a signature map path")
                sig_map = load_map(kwargs["map_path"])
                artifacts.append(str(write_colormap_csv(
                    sig_map, output_dir / "colormap.csv", provenance_comment(sig_map.config_hash, sig_map.seed))))
                summary["rows"] = int(sig_map.bias_grid.size)
            elif kind == "config":
                path = output_dir / "config.json"
                path.write_text(canonical_json(config) + "\n")
                artifacts.append(str(path))
            else:
                raise InvalidInput(f"unknown export kind '{kind}', expected one of {', '.join(KINDS)}")
            success = True

        except TDHError as e:
            summary["error"] = f"{type(e).__name__}: {e}"
            logger.error(summary["error"])
        except Exception as e:
            summary["error"] = f"Export failed: {e}"
            logger.error(summary["error"])

        return self._result(config.board_id, start_time, success, summary, artifacts)
