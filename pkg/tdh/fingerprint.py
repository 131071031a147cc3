"""
Fingerprinting for tdh

Enrolls signature maps as per-board templates and identifies unknown maps
by row-wise cosine similarity of floor-clipped log power, with a per-board
open-set threshold learned from the enrollment sweeps.
"""

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tdh.errors import DuplicateId, EmptyDatabase, GridMismatch, SchemaError, TooFewSweeps
from tdh.io import read_json, write_json
from tdh.signature import SignatureMap, map_from_dict, map_to_dict
from tdh.spectral import NOISE_FLOOR_DBM

logger = logging.getLogger(__name__)

DB_SCHEMA_VERSION = "1.0"


class FingerprintOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    noise_floor: float = NOISE_FLOOR_DBM
    min_threshold: float = Field(0.6, ge=0, le=1)
    sigma: float = Field(3.0, ge=0)
    deviation_floor: float = Field(0.01, ge=0)
    min_sweeps: int = Field(3, ge=2)


@dataclass(frozen=True)
class EnrollmentStats:
    mean: float
    deviation: float
    pairs: int


@dataclass(frozen=True)
class Fingerprint:
    board_id: str
    template: SignatureMap
    stats: EnrollmentStats

    def threshold(self, options: Optional[FingerprintOptions] = None) -> float:
        """Open-set acceptance score: mean - sigma*deviation, never below min_threshold."""
        opts = options or FingerprintOptions()
        spread = max(self.stats.deviation, opts.deviation_floor)
        return max(opts.min_threshold, self.stats.mean - opts.sigma * spread)


@dataclass(frozen=True)
class MatchReport:
    query_id: str
    ranked_scores: List[Tuple[str, float]]
    decision: Optional[str]
    threshold_used: float

    @property
    def is_known(self) -> bool:
        return self.decision is not None

    @property
    def label(self) -> str:
        return f"Known({self.decision})" if self.decision is not None else "Unknown"

    def to_dict(self) -> Dict:
        return {
            "query_id": self.query_id,
            "ranked_scores": [{"board_id": b, "score": s} for b, s in self.ranked_scores],
            "decision": self.label,
            "threshold_used": self.threshold_used,
        }


@dataclass(frozen=True)
class TamperReport:
    board_id: str
    delta: float
    limit: float
    flagged: bool


class FingerprintDB:
    """In-memory fingerprint store persisted as one JSON document. Not safe for concurrent writers."""

    def __init__(self, options: Optional[FingerprintOptions] = None):
        self.options = options or FingerprintOptions()
        self._prints: Dict[str, Fingerprint] = {}
        # config_hash and seed of the run that last wrote the database
        self.provenance: Dict[str, Any] = {"config_hash": "", "seed": 0}

    def __len__(self) -> int:
        return len(self._prints)

    def __contains__(self, board_id: str) -> bool:
        return board_id in self._prints

    def __iter__(self) -> Iterator[Fingerprint]:
        return iter(self._prints.values())

    def ids(self) -> List[str]:
        return list(self._prints)

    def get(self, board_id: str) -> Optional[Fingerprint]:
        return self._prints.get(board_id)

    def add(self, fingerprint: Fingerprint) -> None:
        if fingerprint.board_id in self._prints:
            raise DuplicateId(f"board id '{fingerprint.board_id}' is already enrolled")
        self._prints[fingerprint.board_id] = fingerprint

    def save(self, path) -> Path:
        payload = {
            "schema_version": DB_SCHEMA_VERSION,
            "config_hash": self.provenance["config_hash"],
            "seed": self.provenance["seed"],
            "options": self.options.model_dump(),
            "fingerprints": [
                {
                    "board_id": fp.board_id,
                    "stats": {"mean": fp.stats.mean, "deviation": fp.stats.deviation, "pairs": fp.stats.pairs},
                    "template": map_to_dict(fp.template),
                }
                for fp in self._prints.values()
            ],
        }
        return write_json(path, payload)

    @classmethod
    def load(cls, path) -> "FingerprintDB":
        """
        Raises:
            SchemaError: with the dotted path of the offending field.
        """
        data = read_json(path)
        if not isinstance(data, dict):
            raise SchemaError("database must be an object", "$")
        if data.get("schema_version") != DB_SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema version {data.get('schema_version')!r}", "schema_version")
        try:
            options = FingerprintOptions.model_validate(data.get("options", {}))
        except ValueError as e:
            raise SchemaError(str(e), "options") from e

        db = cls(options)
        try:
            db.provenance = {"config_hash": str(data.get("config_hash", "")), "seed": int(data.get("seed", 0))}
        except (TypeError, ValueError) as e:
            raise SchemaError(str(e), "seed") from e
        for i, entry in enumerate(data.get("fingerprints", [])):
            where = f"fingerprints.{i}"
            try:
                stats = entry["stats"]
                fp = Fingerprint(
                    board_id=str(entry["board_id"]),
                    template=map_from_dict(entry["template"], prefix=f"{where}.template."),
                    stats=EnrollmentStats(float(stats["mean"]), float(stats["deviation"]), int(stats["pairs"])),
                )
            except KeyError as e:
                raise SchemaError(f"missing field {e.args[0]!r}", where) from e
            except (TypeError, ValueError) as e:
                raise SchemaError(str(e), where) from e
            db.add(fp)
        logger.info(f"Loaded {len(db)} fingerprint(s) from {path}")
        return db


def _aligned_rows(a: SignatureMap, b: SignatureMap) -> Tuple[np.ndarray, np.ndarray]:
    """Rows of a and b on a's frequency grid over their shared bias points."""
    fa, fb = a.frequency_grid, b.frequency_grid
    if fa.shape == fb.shape and np.array_equal(fa, fb):
        pb = b.power_matrix
    else:
        step = float(fa[1] - fa[0]) if fa.size > 1 else 0.0
        if abs(fa[0] - fb[0]) > step or abs(fa[-1] - fb[-1]) > step:
            raise GridMismatch(
                f"frequency spans differ: {fa[0]:.4g}-{fa[-1]:.4g} Hz vs {fb[0]:.4g}-{fb[-1]:.4g} Hz"
            )
        pb = np.vstack([np.interp(fa, fb, row) for row in b.power_matrix]) if b.power_matrix.size else \
            np.empty((0, fa.size))

    shared, ia, ib = np.intersect1d(np.round(a.bias_grid, 9), np.round(b.bias_grid, 9), return_indices=True)
    if shared.size == 0:
        raise GridMismatch("bias grids do not overlap")
    return a.power_matrix[ia], pb[ib]


def match_score(a: SignatureMap, b: SignatureMap, noise_floor: float = NOISE_FLOOR_DBM) -> float:
    """
    Similarity of two maps in [0, 1].

    Rows are clip(P - floor, 0). Rows silent in both maps are skipped, a row
    silent in only one scores 0 and the rest score their cosine. Two maps
    with no signal at all score 1.

    Raises:
        GridMismatch: frequency spans or bias grids are incompatible.
    """
    rows_a, rows_b = _aligned_rows(a, b)
    ca = np.clip(rows_a - noise_floor, 0.0, None)
    cb = np.clip(rows_b - noise_floor, 0.0, None)
    na = np.linalg.norm(ca, axis=1)
    nb = np.linalg.norm(cb, axis=1)

    active = (na > 0) | (nb > 0)
    if not active.any():
        return 1.0
    both = (na > 0) & (nb > 0)
    cosines = np.zeros(ca.shape[0])
    cosines[both] = np.sum(ca[both] * cb[both], axis=1) / (na[both] * nb[both])
    return float(np.clip(np.mean(cosines[active]), 0.0, 1.0))


def median_template(board_id: str, sweeps: Sequence[SignatureMap]) -> SignatureMap:
    """Element-wise median of maps sharing both grids."""
    first = sweeps[0]
    for m in sweeps[1:]:
        if not (np.array_equal(m.bias_grid, first.bias_grid) and np.array_equal(m.frequency_grid, first.frequency_grid)):
            raise GridMismatch("enrollment sweeps must share bias and frequency grids")
    dc = None
    if all(m.dc_power is not None for m in sweeps):
        dc = np.median(np.stack([m.dc_power for m in sweeps]), axis=0)
    return SignatureMap(
        bias_grid=first.bias_grid,
        frequency_grid=first.frequency_grid,
        power_matrix=np.median(np.stack([m.power_matrix for m in sweeps]), axis=0),
        board_id=board_id,
        config_hash=first.config_hash,
        seed=first.seed,
        resolution_bandwidth=first.resolution_bandwidth,
        dc_power=dc,
    )


def enroll(db: FingerprintDB, board_id: str, sweeps: Sequence[SignatureMap]) -> Fingerprint:
    """
    Build a fingerprint from repeated sweeps of one board and add it to ``db``.

    Raises:
        TooFewSweeps: fewer than ``db.options.min_sweeps`` sweeps.
        DuplicateId: ``board_id`` is already enrolled.
    """
    opts = db.options
    if len(sweeps) < opts.min_sweeps:
        raise TooFewSweeps(f"enrollment needs at least {opts.min_sweeps} sweeps, got {len(sweeps)}")
    if board_id in db:
        raise DuplicateId(f"board id '{board_id}' is already enrolled")
    if len({m.seed for m in sweeps}) < len(sweeps):
        logger.warning(f"[{board_id}] enrollment sweeps share seeds; deviation will be understated")

    template = median_template(board_id, sweeps)
    scores = [match_score(x, y, opts.noise_floor) for x, y in itertools.combinations(sweeps, 2)]
    stats = EnrollmentStats(float(np.mean(scores)), float(np.std(scores)), len(scores))
    fingerprint = Fingerprint(board_id, template, stats)
    db.add(fingerprint)
    logger.info(f"Enrolled {board_id}: intra-class {stats.mean:.4f} +/- {stats.deviation:.4f}, "
                f"threshold {fingerprint.threshold(opts):.4f}")
    return fingerprint


def identify(db: FingerprintDB, query: SignatureMap, query_id: Optional[str] = None) -> MatchReport:
    """
    Rank every enrolled board against ``query`` and decide Known/Unknown.

    Raises:
        EmptyDatabase: nothing is enrolled.
    """
    if len(db) == 0:
        raise EmptyDatabase("no fingerprints enrolled")
    opts = db.options
    ranked = sorted(
        ((fp.board_id, match_score(fp.template, query, opts.noise_floor)) for fp in db),
        key=lambda item: (-item[1], item[0]),
    )
    best_id, best_score = ranked[0]
    threshold = db.get(best_id).threshold(opts)
    decision = best_id if best_score >= threshold else None
    report = MatchReport(query_id or query.board_id, ranked, decision, threshold)
    logger.info(f"Query {report.query_id}: {report.label} (top {best_id} {best_score:.4f}, threshold {threshold:.4f})")
    return report


def tamper_delta(before: Fingerprint, after: SignatureMap, noise_floor: float = NOISE_FLOOR_DBM) -> float:
    """1 - match_score(template, after); 0 means unchanged."""
    return 1.0 - match_score(before.template, after, noise_floor)


def tamper_check(before: Fingerprint, after: SignatureMap,
                 options: Optional[FingerprintOptions] = None) -> TamperReport:
    """Flag a board whose delta exceeds what its own threshold tolerates."""
    opts = options or FingerprintOptions()
    delta = tamper_delta(before, after, opts.noise_floor)
    limit = 1.0 - before.threshold(opts)
    return TamperReport(before.board_id, delta, limit, delta > limit)
