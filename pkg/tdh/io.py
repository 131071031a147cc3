"""
File helpers shared by the library and the stages.

CSV files carry one optional leading '# ...' comment line (used for the
config hash and seed) followed by a header row. Floats are written with
repr() so re-runs produce byte-identical files.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np

from tdh.errors import SchemaError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def provenance_comment(config_hash: str, seed: int) -> str:
    return f"config_hash={config_hash}, seed={seed}"


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_rows(path: PathLike, header: Sequence[str], rows, comment: Optional[str] = None) -> Path:
    """Write an iterable of row tuples under ``header``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug(f"Wrote {path}")
    return path


def write_columns(path: PathLike, header: Sequence[str], columns: Sequence[np.ndarray],
                  comment: Optional[str] = None) -> Path:
    """Write equal-length columns side by side."""
    return write_rows(path, header, zip(*columns), comment)


def read_rows(path: PathLike) -> Tuple[Optional[str], List[str], List[List[str]]]:
    """Return (comment, header, rows); the comment is None when absent."""
    comment = None
    lines = []
    with open(path, newline="") as f:
        for line in f:
            if line.startswith("#"):
                if comment is None:
                    comment = line[1:].strip()
                continue
            if line.strip():
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None:
        raise SchemaError(f"{path} has no header row")
    return comment, header, list(reader)


def write_json(path: PathLike, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: PathLike) -> Any:
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
