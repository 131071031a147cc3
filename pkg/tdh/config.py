"""
Run configuration for tdh.

A RunConfig fully specifies a reproducible run. It is read from TOML or
JSON, validated with pydantic and hashed so every output can name the
configuration that produced it.
"""

import hashlib
import json
import logging
import re
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from tdh.circuit_sim import OscillatorCircuit, RegimeThresholds, SimulationSettings
from tdh.errors import ConfigError
from tdh.fingerprint import FingerprintOptions
from tdh.link_budget import ForwardLinkParams, ReverseLinkParams
from tdh.presets import get_preset, preset_names
from tdh.signature import SweepConfig
from tdh.spectral import SpectralOptions

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

DEFAULT_DISTANCES = [0.5 * 2 ** (k / 2) for k in range(21)]


class LinkConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    reverse: ReverseLinkParams = Field(default_factory=ReverseLinkParams)
    forward: ForwardLinkParams = Field(default_factory=ForwardLinkParams)
    distances: List[float] = Field(default_factory=lambda: list(DEFAULT_DISTANCES), min_length=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    board: Optional[str] = "board1"
    circuit: Optional[OscillatorCircuit] = None
    bias: Optional[float] = Field(None, ge=0, le=0.4, description="overrides the circuit's bias, V")
    seed: int = Field(0, ge=0)
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    regime: RegimeThresholds = Field(default_factory=RegimeThresholds)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    spectral: SpectralOptions = Field(default_factory=SpectralOptions)
    fingerprint: FingerprintOptions = Field(default_factory=FingerprintOptions)
    link: LinkConfig = Field(default_factory=LinkConfig)
    output_dir: str = "./results"

    @model_validator(mode="after")
    def _check_board(self) -> "RunConfig":
        if self.circuit is None and self.board not in preset_names(variants=True):
            raise ValueError(f"board must be one of {', '.join(preset_names(variants=True))} when no circuit is given")
        return self

    @property
    def board_id(self) -> str:
        return self.board if self.circuit is None else (self.board or "custom")

    def resolve_circuit(self) -> OscillatorCircuit:
        """Explicit circuit, else the named preset, with the bias override applied."""
        circuit = self.circuit if self.circuit is not None else get_preset(self.board)
        return circuit if self.bias is None else circuit.with_bias(self.bias)


def _field_path(loc) -> str:
    return ".".join(str(p) for p in loc)


def _line_of(text: str, key: str) -> Optional[int]:
    pattern = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[=:]', re.MULTILINE)
    match = pattern.search(text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def _validate(data: Dict[str, Any], text: str = "") -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        path = _field_path(err["loc"])
        key = next((str(p) for p in reversed(err["loc"]) if isinstance(p, str)), "")
        raise ConfigError(err["msg"], line=_line_of(text, key) if key else None, field=path or None) from e


def parse_config(text: str, fmt: str = "toml") -> RunConfig:
    """Parse config text; ``fmt`` is 'toml' or 'json'."""
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno) from e
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            match = re.search(r"line (\d+)", str(e))
            raise ConfigError(f"invalid TOML: {e}", line=int(match.group(1)) if match else None) from e
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table/object")
    return _validate(data, text)


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Load a TOML or JSON config; JSON is picked by extension or a leading '{'.

    Raises:
        ConfigError: with line and/or field diagnostics.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    fmt = "json" if path.suffix.lower() == ".json" or text.lstrip().startswith("{") else "toml"
    config = parse_config(text, fmt)
    logger.info(f"Loaded {fmt.upper()} config {path} (hash {config_hash(config)})")
    return config


def with_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """
    Apply dotted-key overrides (``{"sweep.bias_start": 0.18}``) and re-validate.

    None values are ignored so unset CLI flags leave the file value alone.
    """
    data = config.model_dump(mode="json")
    for dotted, value in overrides.items():
        if value is None:
            continue
        target = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return _validate(data)


def canonical_json(config: RunConfig) -> str:
    """Sorted-key JSON of everything but the output directory."""
    return json.dumps(config.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    """First 16 hex digits of SHA-256 over the canonical JSON dump."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]
