"""
Link Budget Stage for tdh

Reverse (tag to reader) detection ranges per harmonic, forward power-up
range and the budget-versus-distance curves.
"""

import logging
import time
from pathlib import Path
from typing import Any, Dict

from base import BaseStage
from tdh.config import config_hash
from tdh.errors import SchemaError, TDHError
from tdh.io import provenance_comment, read_json, write_json, write_rows
from tdh.link_budget import forward_range, link_curve, reverse_link_curves, reverse_range

logger = logging.getLogger(__name__)


class LinkBudgetStage(BaseStage):

    @property
    def name(self) -> str:
        return "linkbudget"

    @property
    def version(self) -> str:
        return "1.0.0"

    def _harmonics_from(self, path: str):
        data = read_json(path)
        try:
            return [(float(r["frequency_Hz"]), float(r["power_dBm"])) for r in data["harmonics"]]
        except (KeyError, TypeError) as e:
            raise SchemaError(f"cannot read harmonic records: {e}", "harmonics") from e

    def run(self, config, outdir: str, **kwargs) -> Dict[str, Any]:
        """
        Args:
            config: RunConfig (link section)
            outdir: Output directory
            **kwargs: harmonics_from (path to a harmonics.json from the simulate stage)

        Returns:
            Dict with standardized stage results
        """
        start_time = time.time()
        output_dir = Path(outdir)
        output_dir.mkdir(parents=True, exist_ok=True)

        chash = config_hash(config)
        comment = provenance_comment(chash, config.seed)
        link = config.link
        summary: Dict[str, Any] = {"config_hash": chash, "seed": config.seed}
        artifacts = []
        success = False

        try:
            reverse = link.reverse
            if kwargs.get("harmonics_from"):
                rows = self._harmonics_from(kwargs["harmonics_from"])
                if rows:
                    reverse = reverse.model_copy(update={"harmonic_powers": rows})

            ranges = reverse_range(reverse)
            summary["reverse_ranges"] = [{"frequency_Hz": f, "range_m": d} for f, d in ranges]
            for frequency, curve in reverse_link_curves(reverse, link.distances).items():
                path = output_dir / f"reverse_{frequency / 1e6:.1f}MHz.csv"
                artifacts.append(str(write_rows(path, ["distance_m", "received_dBm", "harvested_W"],
                                                ((p.distance, p.received_dbm, p.harvested_watts) for p in curve),
                                                comment)))

            forward = link.forward
            summary["forward"] = {
                "carrier_frequency_Hz": forward.carrier_frequency,
                "carrier_inferred": forward.carrier_inferred,
                "tag_consumption_W": forward.tag_consumption,
            }
            curve = link_curve(forward, link.distances)
            artifacts.append(str(write_rows(output_dir / "forward.csv", ["distance_m", "received_dBm", "harvested_W"],
                                            ((p.distance, p.received_dbm, p.harvested_watts) for p in curve),
                                            comment)))
            summary["forward"]["range_m"] = forward_range(forward)

            artifacts.append(str(write_json(output_dir / "link_summary.json", {
                "config_hash": chash, "seed": config.seed,
                "inputs": {"reverse": reverse.model_dump(mode="json"), "forward": forward.model_dump(mode="json")},
                "reverse_ranges": summary["reverse_ranges"],
                "forward": summary["forward"],
            })))
            success = True
            logger.info(f"Forward range {summary['forward']['range_m']:.2f} m, "
                        f"reverse {[round(r['range_m'], 1) for r in summary['reverse_ranges']]} m")

        except TDHError as e:
            summary["error"] = f"{type(e).__name__}: {e}"
            logger.error(summary["error"])
        except Exception as e:
            summary["error"] = f"Link budget failed: {e}"
            logger.error(summary["error"])

        return self._result(config.board_id, start_time, success, summary, artifacts)
