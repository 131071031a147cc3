"""
Fingerprint Stage for tdh

Enroll, identify and tamper actions against a JSON fingerprint database.
Maps come from files when given, otherwise they are simulated from the run
configuration.
"""

import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from base import BaseStage
from tdh.config import config_hash
from tdh.errors import InvalidInput, TDHError
from tdh.fingerprint import FingerprintDB, enroll, identify, tamper_check
from tdh.io import write_json
from tdh.signature import SignatureMap, SweepRequest, load_map, sweep_batch

logger = logging.getLogger(__name__)

ACTIONS = ("enroll", "identify", "tamper")


class FingerprintStage(BaseStage):

    @property
    def name(self) -> str:
        return "fingerprint"

    @property
    def version(self) -> str:
        return "1.0.0"

    def _simulated_maps(self, config, board_id: str, seeds: List[int]) -> List[SignatureMap]:
        circuit = config.resolve_circuit()
        chash = config_hash(config)
        requests = [
            SweepRequest(circuit, config.sweep.model_copy(update={"seed": s}), board_id, chash) for s in seeds
        ]
        return sweep_batch(requests, config.simulation)

    def _open_db(self, config, db_path: Path) -> FingerprintDB:
        if db_path.exists():
            return FingerprintDB.load(db_path)
        logger.info(f"No database at {db_path}, starting empty")
        return FingerprintDB(config.fingerprint)

    def run(self, config, outdir: str, **kwargs) -> Dict[str, Any]:
        """
        Args:
            config: RunConfig
            outdir: Output directory
            **kwargs: action ('enroll' | 'identify' | 'tamper'), db_path, board_id,
                maps (list of map JSON paths), sweeps (enrollment sweep count)

        Returns:
            Dict with standardized stage results
        """
        start_time = time.time()
        output_dir = Path(outdir)
        output_dir.mkdir(parents=True, exist_ok=True)

        action = kwargs.get("action", "identify")
        db_path = Path(kwargs.get("db_path") or output_dir / "fingerprints.json")
        board_id: str = kwargs.get("board_id") or config.board_id
        map_paths: Optional[List[str]] = kwargs.get("maps") or None
        provenance = {"config_hash": config_hash(config), "seed": config.sweep.seed}
        summary: Dict[str, Any] = {"action": action, "database": str(db_path), "board": board_id, **provenance}
        artifacts = []
        success = False

        try:
            if action not in ACTIONS:
                raise InvalidInput(f"unknown action '{action}', expected one of {', '.join(ACTIONS)}")
            db = self._open_db(config, db_path)

            if action == "enroll":
                if map_paths:
                    sweeps = [load_map(p) for p in map_paths]
                else:
                    count = int(kwargs.get("sweeps") or config.fingerprint.min_sweeps)
                    sweeps = self._simulated_maps(config, board_id, [config.sweep.seed + i for i in range(count)])
                fp = enroll(db, board_id, sweeps)
                db.provenance = dict(provenance)
                db.save(db_path)
                artifacts.append(str(db_path))
                summary.update({"enrolled": board_id, "intra_mean": fp.stats.mean,
                                "intra_deviation": fp.stats.deviation,
                                "threshold": fp.threshold(db.options), "database_size": len(db)})

            else:
                query = load_map(map_paths[0]) if map_paths else \
                    self._simulated_maps(config, board_id, [config.sweep.seed])[0]

                if action == "identify":
                    report = identify(db, query)
                    out = write_json(output_dir / "match_report.json", {
                        **provenance, **report.to_dict(),
                        "query_provenance": {"config_hash": query.config_hash, "seed": query.seed},
                    })
                    summary.update({"decision": report.label, "top_score": report.ranked_scores[0][1],
                                    "threshold": report.threshold_used})
                else:
                    fp = db.get(board_id)
                    if fp is None:
                        raise InvalidInput(f"board id '{board_id}' is not enrolled in {db_path}")
                    report = tamper_check(fp, query, db.options)
                    out = write_json(output_dir / "tamper_report.json", {
                        **provenance,
                        "query_provenance": {"config_hash": query.config_hash, "seed": query.seed},
                        "board_id": report.board_id, "delta": report.delta,
                        "limit": report.limit, "flagged": report.flagged,
                    })
                    summary.update({"delta": report.delta, "limit": report.limit, "flagged": report.flagged})
                artifacts.append(str(out))

            success = True

        except TDHError as e:
            summary["error"] = f"{type(e).__name__}: {e}"
            logger.error(summary["error"])
        except Exception as e:
            summary["error"] = f"Fingerprint {action} failed: {e}"
            logger.error(summary["error"])

        return self._result(board_id, start_time, success, summary, artifacts)
