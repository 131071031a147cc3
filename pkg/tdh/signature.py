"""
Signature Maps for tdh

Bias sweeps that turn a board into a bias x frequency power matrix (its
harmonic signature), the compact features derived from it and the map's
JSON persistence.
"""

import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from tdh.circuit_sim import (
    OscillatorCircuit,
    SimulationSettings,
    TransientJob,
    TransientTrace,
    board_dc_power,
    simulate_batch,
)
from tdh.errors import InvalidInput, NoSignal, SchemaError, StepUnstable
from tdh.io import read_json, write_json, write_rows
from tdh.spectral import (
    DEFAULT_SPAN,
    MAX_POINTS,
    NOISE_FLOOR_DBM,
    Spectrum,
    Window,
    compute_spectrum,
    crop_and_decimate,
    dc_rf_efficiency,
    extract_harmonics,
    find_fundamental,
    interpolated_fundamental,
    rbw_smooth,
    tunable_range,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.1"
SUPPORTED_SCHEMAS = ("1.0", "1.1")

# Onset element of the feature vector when no row oscillates
NO_ONSET = -1.0


class SweepConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    bias_start: float = Field(0.003, ge=0, le=0.4)
    bias_stop: float = Field(0.300, ge=0, le=0.4)
    bias_step: float = Field(0.001, gt=0)
    span: Tuple[float, float] = DEFAULT_SPAN
    points_per_spectrum: int = Field(MAX_POINTS, ge=2)
    seed: int = Field(0, ge=0)
    noise_floor: float = NOISE_FLOOR_DBM
    window: Window = Window.HANN
    rbw: Optional[float] = Field(None, gt=0)
    num_workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self) -> "SweepConfig":
        if self.bias_stop < self.bias_start:
            raise ValueError("bias_stop must not be below bias_start")
        if not 0 <= self.span[0] < self.span[1]:
            raise ValueError("span must be (start, stop) with 0 <= start < stop")
        return self

    def bias_grid(self) -> np.ndarray:
        """Bias points rounded to the nanovolt so sub-range sweeps land on the same values."""
        count = int(round((self.bias_stop - self.bias_start) / self.bias_step)) + 1
        return np.round(self.bias_start + self.bias_step * np.arange(count), 9)


@dataclass(frozen=True, eq=False)
class SignatureMap:
    bias_grid: np.ndarray
    frequency_grid: np.ndarray
    power_matrix: np.ndarray
    board_id: str
    config_hash: str = ""
    seed: int = 0
    resolution_bandwidth: float = 0.0
    faulted_rows: Tuple[int, ...] = ()
    dc_power: Optional[np.ndarray] = None
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        bias = np.asarray(self.bias_grid, dtype=float)
        freqs = np.asarray(self.frequency_grid, dtype=float)
        matrix = np.asarray(self.power_matrix, dtype=float)
        if matrix.shape != (bias.size, freqs.size):
            raise InvalidInput(f"power_matrix shape {matrix.shape} does not match grids "
                               f"({bias.size}, {freqs.size})")
        if not np.all(np.isfinite(matrix)):
            raise InvalidInput("power_matrix has non-finite entries")
        object.__setattr__(self, "bias_grid", bias)
        object.__setattr__(self, "frequency_grid", freqs)
        object.__setattr__(self, "power_matrix", matrix)
        object.__setattr__(self, "faulted_rows", tuple(int(r) for r in self.faulted_rows))
        if self.dc_power is not None:
            dc = np.asarray(self.dc_power, dtype=float)
            if dc.shape != bias.shape:
                raise InvalidInput("dc_power must have one entry per bias row")
            object.__setattr__(self, "dc_power", dc)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignatureMap):
            return NotImplemented
        same_dc = (self.dc_power is None and other.dc_power is None) or (
            self.dc_power is not None and other.dc_power is not None
            and np.array_equal(self.dc_power, other.dc_power)
        )
        return (
            np.array_equal(self.bias_grid, other.bias_grid)
            and np.array_equal(self.frequency_grid, other.frequency_grid)
            and np.array_equal(self.power_matrix, other.power_matrix)
            and self.board_id == other.board_id
            and self.config_hash == other.config_hash
            and self.seed == other.seed
            and self.resolution_bandwidth == other.resolution_bandwidth
            and self.faulted_rows == other.faulted_rows
            and same_dc
        )

    def row_spectrum(self, index: int) -> Spectrum:
        return Spectrum(
            frequency_bins=self.frequency_grid,
            power=self.power_matrix[index],
            resolution_bandwidth=self.resolution_bandwidth or float(self.frequency_grid[1] - self.frequency_grid[0]),
            span=(float(self.frequency_grid[0]), float(self.frequency_grid[-1])),
        )


@dataclass(frozen=True)
class SweepRequest:
    circuit: OscillatorCircuit
    config: SweepConfig
    board_id: str = "custom"
    config_hash: str = ""


@dataclass
class _Rows:
    """Per-row results of one sweep before they are frozen into a map."""

    biases: np.ndarray
    frequency_grid: Optional[np.ndarray] = None
    resolution_bandwidth: float = 0.0
    power: List[Optional[np.ndarray]] = field(default_factory=list)
    dc_power: List[float] = field(default_factory=list)


def row_seed(seed: int, bias: float) -> int:
    """Seed for one sweep row; depends only on the master seed and the bias in microvolts."""
    state = np.random.SeedSequence([int(seed), int(round(bias * 1e6))]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _row_spectrum(trace: TransientTrace, config: SweepConfig, load: float) -> Spectrum:
    spectrum = compute_spectrum(trace, window=config.window, load=load, span=config.span)
    if config.rbw is not None:
        spectrum = rbw_smooth(spectrum, config.rbw)
    return crop_and_decimate(spectrum, max_points=config.points_per_spectrum)


def _empty_grid(config: SweepConfig, settings: SimulationSettings, load: float) -> Spectrum:
    silent = TransientTrace(settings.sample_interval, np.zeros(settings.n_samples), 0.0, 0)
    return _row_spectrum(silent, config, load)


def _collect(request: SweepRequest, biases: np.ndarray, results: Sequence, settings: SimulationSettings) -> _Rows:
    config = request.config
    load = request.circuit.load_resistance
    rows = _Rows(biases=biases)
    for bias, result in zip(biases, results):
        rows.dc_power.append(board_dc_power(request.circuit.with_bias(float(bias))))
        if isinstance(result, StepUnstable):
            logger.warning(f"[{request.board_id}] row at {bias:.3f} V faulted: {result}")
            rows.power.append(None)
            continue
        spectrum = _row_spectrum(result, config, load)
        if rows.frequency_grid is None:
            rows.frequency_grid = spectrum.frequency_bins
            rows.resolution_bandwidth = spectrum.resolution_bandwidth
        rows.power.append(np.maximum(spectrum.power, config.noise_floor))

    if rows.frequency_grid is None:
        grid = _empty_grid(config, settings, load)
        rows.frequency_grid = grid.frequency_bins
        rows.resolution_bandwidth = grid.resolution_bandwidth
    return rows


def _freeze(request: SweepRequest, rows: _Rows) -> SignatureMap:
    floor_row = np.full(rows.frequency_grid.size, request.config.noise_floor)
    faulted = tuple(i for i, p in enumerate(rows.power) if p is None)
    matrix = np.vstack([floor_row if p is None else p for p in rows.power]) if rows.power else \
        np.empty((0, rows.frequency_grid.size))
    return SignatureMap(
        bias_grid=rows.biases,
        frequency_grid=rows.frequency_grid,
        power_matrix=matrix,
        board_id=request.board_id,
        config_hash=request.config_hash,
        seed=request.config.seed,
        resolution_bandwidth=rows.resolution_bandwidth,
        faulted_rows=faulted,
        dc_power=np.asarray(rows.dc_power),
    )


def _jobs(request: SweepRequest, biases: np.ndarray) -> List[TransientJob]:
    return [TransientJob(request.circuit.with_bias(float(b)), row_seed(request.config.seed, float(b)))
            for b in biases]


def sweep_batch(requests: Sequence[SweepRequest], settings: Optional[SimulationSettings] = None) -> List[SignatureMap]:
    """
    Run several sweeps in a single batched integration.

    Every row of every request becomes one column of the integrator; rows
    are independent, so each map equals what sweep_bias would return alone.
    """
    settings = settings or SimulationSettings()
    grids = [req.config.bias_grid() for req in requests]
    jobs = [job for req, grid in zip(requests, grids) for job in _jobs(req, grid)]
    logger.info(f"Sweeping {len(requests)} map(s), {len(jobs)} rows in one batch")
    results = simulate_batch(jobs, settings=settings)

    maps = []
    offset = 0
    for req, grid in zip(requests, grids):
        chunk = results[offset:offset + grid.size]
        offset += grid.size
        maps.append(_freeze(req, _collect(req, grid, chunk, settings)))
    return maps


def sweep_bias(circuit: OscillatorCircuit, config: SweepConfig, board_id: str = "custom",
               settings: Optional[SimulationSettings] = None, config_hash: str = "") -> SignatureMap:
    """
    Sweep the bias over ``config`` and stack one clipped spectrum row per point.

    Faulted rows are kept at the noise floor and listed in ``faulted_rows``.
    """
    return sweep_batch([SweepRequest(circuit, config, board_id, config_hash)], settings)[0]


def _sweep_chunk(request: SweepRequest, biases: np.ndarray, settings: SimulationSettings) -> _Rows:
    results = simulate_batch(_jobs(request, biases), settings=settings)
    return _collect(request, biases, results, settings)


async def sweep_bias_async(circuit: OscillatorCircuit, config: SweepConfig, board_id: str = "custom",
                           settings: Optional[SimulationSettings] = None, config_hash: str = "",
                           num_workers: Optional[int] = None) -> SignatureMap:
    """
    sweep_bias fanned out over a process pool.

    The bias grid is split into contiguous chunks, at most ``num_workers``
    run at once and the chunks are merged back in bias order.
    """
    settings = settings or SimulationSettings()
    workers = num_workers or config.num_workers
    request = SweepRequest(circuit, config, board_id, config_hash)
    grid = config.bias_grid()
    chunks = [c for c in np.array_split(grid, max(1, min(workers * 2, grid.size))) if c.size]
    semaphore = asyncio.Semaphore(workers)
    loop = asyncio.get_running_loop()

    with ProcessPoolExecutor(max_workers=workers) as pool:
        async def run_chunk(biases: np.ndarray) -> _Rows:
            async with semaphore:
                logger.debug(f"[{board_id}] chunk {biases[0]:.3f}-{biases[-1]:.3f} V")
                return await loop.run_in_executor(pool, _sweep_chunk, request, biases, settings)

        parts = await asyncio.gather(*(run_chunk(c) for c in chunks))

    merged = _Rows(biases=grid, frequency_grid=None)
    for part in parts:
        if merged.frequency_grid is None and any(p is not None for p in part.power):
            merged.frequency_grid = part.frequency_grid
            merged.resolution_bandwidth = part.resolution_bandwidth
        merged.power.extend(part.power)
        merged.dc_power.extend(part.dc_power)
    if merged.frequency_grid is None:
        merged.frequency_grid = parts[0].frequency_grid
        merged.resolution_bandwidth = parts[0].resolution_bandwidth
    return _freeze(request, merged)


def row_fundamentals(sig_map: SignatureMap, noise_floor: float = NOISE_FLOOR_DBM) -> List[Optional[Tuple[float, float]]]:
    """(frequency, power) of each row's fundamental, None for silent rows."""
    out = []
    for i in range(sig_map.bias_grid.size):
        try:
            out.append(find_fundamental(sig_map.row_spectrum(i), noise_floor))
        except NoSignal:
            out.append(None)
    return out


def feature_vector(sig_map: SignatureMap, noise_floor: float = NOISE_FLOOR_DBM,
                   rel_tolerance: float = 0.02) -> np.ndarray:
    """
    Fixed-length descriptor of a map.

    Layout for a map with N rows:
        [0:N]     fundamental frequency per row, Hz (0 for silent rows)
        [N:2N]    fundamental power per row, dBm (noise_floor for silent rows)
        [2N:3N]   harmonic count per row
        [3N]      tunable range over oscillating rows, Hz (0 with fewer than two)
        [3N+1]    onset bias, V (-1 when no row oscillates)
    """
    n = sig_map.bias_grid.size
    freqs = np.zeros(n)
    powers = np.full(n, float(noise_floor))
    counts = np.zeros(n)
    points = []
    for i, found in enumerate(row_fundamentals(sig_map, noise_floor)):
        if found is None:
            continue
        freqs[i], powers[i] = found
        harmonics = extract_harmonics(sig_map.row_spectrum(i), found[0], rel_tolerance, noise_floor)
        counts[i] = len(harmonics.harmonics)
        points.append((float(sig_map.bias_grid[i]), found[0]))

    spread = tunable_range(points) if len(points) >= 2 else 0.0
    onset = points[0][0] if points else NO_ONSET
    return np.concatenate([freqs, powers, counts, [spread, onset]])


def fundamentals_table(sig_map: SignatureMap, noise_floor: float = NOISE_FLOOR_DBM) -> List[Tuple[float, float, float]]:
    """(bias, fundamental, power) for every oscillating row."""
    return [(float(b), f[0], f[1]) for b, f in zip(sig_map.bias_grid, row_fundamentals(sig_map, noise_floor))
            if f is not None]


def efficiency_curve(sig_map: SignatureMap, noise_floor: float = NOISE_FLOOR_DBM) -> List[Tuple[float, float]]:
    """(bias, DC-to-RF efficiency) for every oscillating row with known DC power."""
    if sig_map.dc_power is None:
        return []
    curve = []
    for i, found in enumerate(row_fundamentals(sig_map, noise_floor)):
        dc = float(sig_map.dc_power[i])
        if found is None or dc <= 0:
            continue
        curve.append((float(sig_map.bias_grid[i]), dc_rf_efficiency(1e-3 * 10 ** (found[1] / 10), dc)))
    return curve


def fundamental_jitter(sig_map: SignatureMap, noise_floor: float = NOISE_FLOOR_DBM,
                       rows: int = 10) -> Tuple[float, float]:
    """
    Std of row-to-row fundamental steps just past onset and mid-band.

    Frequencies are interpolated between bins. The first value covers the
    first ``rows`` steps after the first oscillating row, the second the
    ``rows`` steps centred on the middle of the oscillating rows. A larger
    first value means the fundamental wanders right after onset.
    """
    freqs = []
    for i in range(sig_map.bias_grid.size):
        try:
            freqs.append(interpolated_fundamental(sig_map.row_spectrum(i), noise_floor)[0])
        except NoSignal:
            continue
    freqs = np.asarray(freqs)
    if freqs.size < 3:
        return 0.0, 0.0
    steps = np.diff(freqs)
    start = max(0, min(steps.size // 2 - rows // 2, steps.size - rows))
    return float(np.std(steps[:rows])), float(np.std(steps[start:start + rows]))


def colormap_rows(sig_map: SignatureMap):
    """Yield ``(bias_V, frequency_Hz, power_dBm)`` triplets in row-major order."""
    for bias, row in zip(sig_map.bias_grid, sig_map.power_matrix):
        for freq, power in zip(sig_map.frequency_grid, row):
            yield float(bias), float(freq), float(power)


def write_colormap_csv(sig_map: SignatureMap, path, comment: Optional[str] = None):
    return write_rows(path, ["bias_V", "frequency_Hz", "power_dBm"], colormap_rows(sig_map), comment)


def write_fundamentals_csv(sig_map: SignatureMap, path, noise_floor: float = NOISE_FLOOR_DBM,
                           comment: Optional[str] = None):
    return write_rows(path, ["bias_V", "fundamental_Hz", "power_dBm"], fundamentals_table(sig_map, noise_floor),
                      comment)


class _Provenance(BaseModel):
    config_hash: str = ""
    seed: int = 0


class _MapDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: str
    board_id: str
    provenance: _Provenance = Field(default_factory=_Provenance)
    bias_grid: List[float]
    frequency_grid: List[float]
    power_matrix: List[List[float]]
    resolution_bandwidth: float = 0.0
    faulted_rows: List[int] = Field(default_factory=list)
    dc_power: Optional[List[float]] = None


def map_to_dict(sig_map: SignatureMap) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "board_id": sig_map.board_id,
        "provenance": {"config_hash": sig_map.config_hash, "seed": sig_map.seed},
        "bias_grid": sig_map.bias_grid.tolist(),
        "frequency_grid": sig_map.frequency_grid.tolist(),
        "power_matrix": sig_map.power_matrix.tolist(),
        "resolution_bandwidth": sig_map.resolution_bandwidth,
        "faulted_rows": list(sig_map.faulted_rows),
        "dc_power": None if sig_map.dc_power is None else sig_map.dc_power.tolist(),
    }


def map_from_dict(data: Any, prefix: str = "") -> SignatureMap:
    """
    Validate a map document.

    Raises:
        SchemaError: with the dotted path of the offending field.
    """
    if not isinstance(data, dict):
        raise SchemaError("map document must be an object", prefix.rstrip(".") or "$")
    version = data.get("schema_version")
    if version not in SUPPORTED_SCHEMAS:
        raise SchemaError(f"unsupported schema version {version!r}", f"{prefix}schema_version")
    try:
        doc = _MapDocument.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        path = ".".join(str(p) for p in err["loc"])
        raise SchemaError(err["msg"], f"{prefix}{path}") from e

    rows = len(doc.bias_grid)
    if len(doc.power_matrix) != rows:
        raise SchemaError(f"{len(doc.power_matrix)} rows for {rows} bias points", f"{prefix}power_matrix")
    for i, row in enumerate(doc.power_matrix):
        if len(row) != len(doc.frequency_grid):
            raise SchemaError(f"{len(row)} columns for {len(doc.frequency_grid)} frequencies",
                              f"{prefix}power_matrix.{i}")
    if doc.dc_power is not None and len(doc.dc_power) != rows:
        raise SchemaError(f"{len(doc.dc_power)} entries for {rows} bias points", f"{prefix}dc_power")

    try:
        return SignatureMap(
            bias_grid=np.array(doc.bias_grid, dtype=float),
            frequency_grid=np.array(doc.frequency_grid, dtype=float),
            power_matrix=np.array(doc.power_matrix, dtype=float).reshape(rows, len(doc.frequency_grid)),
            board_id=doc.board_id,
            config_hash=doc.provenance.config_hash,
            seed=doc.provenance.seed,
            resolution_bandwidth=doc.resolution_bandwidth,
            faulted_rows=tuple(doc.faulted_rows),
            dc_power=None if doc.dc_power is None else np.array(doc.dc_power, dtype=float),
        )
    except InvalidInput as e:
        raise SchemaError(str(e), f"{prefix}power_matrix") from e


def save_map(sig_map: SignatureMap, path):
    return write_json(path, map_to_dict(sig_map))


def load_map(path) -> SignatureMap:
    return map_from_dict(read_json(path))
