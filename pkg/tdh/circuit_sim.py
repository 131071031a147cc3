"""
Oscillator Circuit Simulation for tdh

One-port negative-resistance oscillator built around the tunnel diode board:
small-signal startup analysis, an optional Kurokawa stability diagnostic,
batched fixed-step RK4 transient integration and regime classification of
the resulting load-voltage traces.

Board topology (node A is AC-grounded by the smoothing capacitor):

    V_bias --R_s--L_choke--+--L_lead--+--C_block--R_load--gnd
                           |          |
                          C_s      diode || Cj
                           |          |
                          gnd        gnd
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from types import SimpleNamespace
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import bisect, brentq
from scipy.signal import find_peaks, lfilter

from tdh.diode_model import DiodeParams, _conductance, _current, junction_capacitance
from tdh.errors import InvalidInput, StepUnstable
from tdh.io import write_columns

logger = logging.getLogger(__name__)

# Spectral analysis needs at least this many samples
MIN_TRACE_SAMPLES = 2 ** 14

# Startup search band
SEARCH_BAND = (1e6, 10e9)
SEARCH_POINTS = 4001


def _board1_diode() -> DiodeParams:
    return DiodeParams(junction_capacitance=5.62e-12, capacitance_voltage_coefficient=2.0)


class OscillatorCircuit(BaseModel):
    """
    Lumped board netlist. Defaults are the board1 preset.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    diode: DiodeParams = Field(default_factory=_board1_diode)
    choke_inductance: float = Field(18e-9, gt=0)
    smoothing_capacitance: float = Field(0.1e-6, gt=0)
    dc_block_capacitance: float = Field(1.368e-12, gt=0)
    load_resistance: float = Field(50.0, gt=0)
    lead_inductance: float = Field(5.348e-9, gt=0)
    series_resistance: float = Field(0.5, ge=0)
    bias_voltage: float = Field(0.200, ge=0, le=0.4)

    def with_bias(self, bias: float) -> "OscillatorCircuit":
        return self.updated(bias_voltage=bias)

    def updated(self, **changes) -> "OscillatorCircuit":
        """Validated copy with some fields replaced (nested 'diode' may be a dict of changes)."""
        data = self.model_dump()
        diode_changes = changes.pop("diode", None)
        if isinstance(diode_changes, DiodeParams):
            diode_changes = diode_changes.model_dump()
        if diode_changes:
            data["diode"].update(diode_changes)
        data.update(changes)
        return OscillatorCircuit.model_validate(data)


class SimulationSettings(BaseModel):
    """Transient integration settings shared by every row of a batch."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sample_rate: float = Field(10e9, gt=0, description="output samples per second")
    max_frequency: float = Field(1.5e9, gt=0, description="RK4 step <= 1/(50*max_frequency)")
    n_samples: int = Field(MIN_TRACE_SAMPLES, ge=16)
    startup_noise: float = Field(1e-12, ge=0, description="V, std of junction perturbation")
    blowup_limit: float = Field(10.0, gt=0)
    startup: Literal["equilibrium", "power_on"] = "equilibrium"

    @property
    def sample_interval(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def substeps(self) -> int:
        return max(1, math.ceil(50.0 * self.max_frequency / self.sample_rate))

    @property
    def step(self) -> float:
        return self.sample_interval / self.substeps

    @property
    def duration(self) -> float:
        return self.n_samples * self.sample_interval


class Regime(str, Enum):
    QUIESCENT = "Quiescent"
    STEADY = "SteadyOscillation"
    BURSTY = "Bursty"


class RegimeThresholds(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    noise_floor: float = Field(-80.0, description="dBm into load; sets the quiescent RMS")
    load_resistance: float = Field(50.0, gt=0)
    burst_ratio: float = Field(10.0, gt=1)
    min_burst_cycles: int = Field(3, ge=1)
    envelope_divisor: float = Field(20.0, gt=0)
    steady_fraction: float = Field(0.25, gt=0, le=1)
    growth_ratio: float = Field(1.5, gt=1, description="late/early RMS ratio counted as start-up")
    dc_cutoff: float = Field(1e6, ge=0)

    @property
    def rms_floor(self) -> float:
        return math.sqrt(10 ** ((self.noise_floor - 30.0) / 10.0) * self.load_resistance)


@dataclass(frozen=True)
class TransientTrace:
    sample_interval: float
    load_voltage: np.ndarray
    bias_voltage: float
    seed: int

    def __post_init__(self):
        if self.sample_interval <= 0:
            raise InvalidInput("sample_interval must be positive")
        if not np.all(np.isfinite(self.load_voltage)):
            raise InvalidInput("trace contains non-finite samples")

    def __len__(self) -> int:
        return int(self.load_voltage.size)

    @property
    def duration(self) -> float:
        return len(self) * self.sample_interval

    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.sample_interval

    def steady_state(self, fraction: float = 0.25) -> np.ndarray:
        """Final ``fraction`` of the samples."""
        start = int(round(len(self) * (1.0 - fraction)))
        return self.load_voltage[start:]


@dataclass(frozen=True)
class StartupVerdict:
    oscillating: bool
    resonant_frequency: Optional[float] = None
    net_resistance_at_resonance: Optional[float] = None
    operating_point: float = 0.0


@dataclass(frozen=True)
class KurokawaReport:
    """Describing-function steady state and the stability sign test at it."""

    amplitude: float
    frequency: float
    stability_margin: float
    stable: bool
    predicted_load_power_dbm: float


@dataclass(frozen=True)
class RegimeLabel:
    label: Regime
    mean: float
    variance: float
    burst_rate: float
    burst_cycles: int = 0
    steady_rms: float = 0.0
    growth: float = 1.0
    starting: bool = False


@dataclass(frozen=True)
class TransientJob:
    circuit: OscillatorCircuit
    seed: int


@dataclass
class _Batch:
    """Per-row circuit constants as arrays, built once per integration."""

    diode: SimpleNamespace
    cj0: np.ndarray
    cj_k: np.ndarray
    vbias: np.ndarray
    rs: np.ndarray
    inv_lch: np.ndarray
    inv_cs: np.ndarray
    inv_lld: np.ndarray
    inv_rl: np.ndarray
    inv_cb: np.ndarray


def dc_operating_point(circuit: OscillatorCircuit) -> float:
    """Junction voltage solving v + R_s*I(v) = V_bias."""
    vb = circuit.bias_voltage
    if vb == 0.0:
        return 0.0
    rs = circuit.series_resistance
    if rs == 0.0:
        return vb

    def residual(v: float) -> float:
        return v + rs * float(_current(circuit.diode, v)) - vb

    return float(brentq(residual, 0.0, vb, xtol=1e-12))


def board_dc_power(circuit: OscillatorCircuit) -> float:
    """Power drawn from the bias supply at the DC operating point, in watts."""
    v0 = dc_operating_point(circuit)
    return circuit.bias_voltage * float(_current(circuit.diode, v0))


def _impedances(circuit: OscillatorCircuit, frequency: np.ndarray, v0: float,
                device_conductance: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    w = 2.0 * np.pi * np.asarray(frequency, dtype=float)
    jw = 1j * w
    choke = circuit.series_resistance + jw * circuit.choke_inductance
    z_a = 1.0 / (jw * circuit.smoothing_capacitance + 1.0 / choke)
    z_lead = jw * circuit.lead_inductance + z_a
    z_load = circuit.load_resistance + 1.0 / (jw * circuit.dc_block_capacitance)
    z_res = z_lead * z_load / (z_lead + z_load)

    g = float(_conductance(circuit.diode, v0)) if device_conductance is None else device_conductance
    cj = float(junction_capacitance(circuit.diode, v0))
    z_dev = 1.0 / (g + jw * cj)
    return z_res, z_dev


def small_signal_impedances(circuit: OscillatorCircuit, frequency: float) -> Tuple[complex, complex]:
    """
    Resonator and device impedance at one frequency.

    The device is the diode's differential conductance at the DC operating
    point in parallel with the junction capacitance there.
    """
    if not frequency > 0:
        raise InvalidInput(f"frequency must be positive, got {frequency}")
    z_res, z_dev = _impedances(circuit, np.array([frequency]), dc_operating_point(circuit))
    return complex(z_res[0]), complex(z_dev[0])


def _first_crossing(fn, grid: np.ndarray, rising: bool) -> Optional[float]:
    values = fn(grid)
    if rising:
        hits = np.flatnonzero((values[:-1] < 0) & (values[1:] >= 0))
        idx = hits[0] if hits.size else None
    else:
        hits = np.flatnonzero((values[:-1] > 0) & (values[1:] <= 0))
        idx = hits[-1] if hits.size else None
    if idx is None:
        return None
    lo, hi = float(grid[idx]), float(grid[idx + 1])
    if values[idx + 1] == 0:
        return hi
    return float(bisect(lambda f: float(fn(np.array([f]))[0]), lo, hi, xtol=1.0, maxiter=200))


def startup_check(circuit: OscillatorCircuit) -> StartupVerdict:
    """
    Small-signal startup condition.

    Finds the first frequency in 1 MHz-10 GHz where the loop reactance
    X_res + X_N rises through zero and reports whether the loop resistance
    there is negative.
    """
    v0 = dc_operating_point(circuit)
    grid = np.logspace(np.log10(SEARCH_BAND[0]), np.log10(SEARCH_BAND[1]), SEARCH_POINTS)

    def reactance(f: np.ndarray) -> np.ndarray:
        z_res, z_dev = _impedances(circuit, f, v0)
        return (z_res + z_dev).imag

    f0 = _first_crossing(reactance, grid, rising=True)
    if f0 is None:
        logger.debug(f"No reactance zero crossing at bias {circuit.bias_voltage:.4f} V")
        return StartupVerdict(False, None, None, v0)

    z_res, z_dev = _impedances(circuit, np.array([f0]), v0)
    r_net = float((z_res + z_dev).real[0])
    return StartupVerdict(r_net < 0, f0, r_net, v0)


def resonator_resonance(circuit: OscillatorCircuit) -> Optional[float]:
    """Anti-resonance of the passive network (Im Z_res falling through zero)."""
    grid = np.logspace(np.log10(SEARCH_BAND[0]), np.log10(SEARCH_BAND[1]), SEARCH_POINTS)
    v0 = dc_operating_point(circuit)
    return _first_crossing(lambda f: _impedances(circuit, f, v0)[0].imag, grid, rising=False)


def _describing_conductance(circuit: OscillatorCircuit, v0: float, amplitude: float,
                            points: int = 256) -> float:
    theta = 2.0 * np.pi * np.arange(points) / points
    v = v0 + amplitude * np.cos(theta)
    with np.errstate(over="ignore"):
        i = _current(circuit.diode, v)
    return float(2.0 * np.mean(i * np.cos(theta)) / amplitude)


def kurokawa_check(circuit: OscillatorCircuit) -> Optional[KurokawaReport]:
    """
    Kurokawa stability test at the large-signal operating point.

    The device impedance is taken from the first-harmonic describing function
    of the IV curve, Z_N(A, w) = 1 / (G1(A) + j*w*Cj(v0)). The steady state
    (A0, w0) solves Z_res + Z_N = 0; the oscillation is stable when
    dR/dA * dX/dw - dX/dA * dR/dw > 0 there. This criterion comes from
    standard microwave oscillator theory.

    Returns None when the circuit does not start up or no amplitude balances
    the loop before the swing reaches 0 V.
    """
    verdict = startup_check(circuit)
    if not verdict.oscillating:
        return None
    v0 = verdict.operating_point
    f_start = verdict.resonant_frequency

    def loop(amplitude: float, f: float) -> complex:
        g1 = _describing_conductance(circuit, v0, amplitude)
        z_res, z_dev = _impedances(circuit, np.array([f]), v0, device_conductance=g1)
        return complex(z_res[0] + z_dev[0])

    def frequency_at(amplitude: float) -> Optional[float]:
        grid = np.linspace(0.6 * f_start, 1.6 * f_start, 401)
        g1 = _describing_conductance(circuit, v0, amplitude)
        fn = lambda f: sum(_impedances(circuit, f, v0, device_conductance=g1)).imag
        return _first_crossing(fn, grid, rising=True)

    def resistance_at(amplitude: float) -> float:
        f = frequency_at(amplitude)
        return float("inf") if f is None else loop(amplitude, f).real

    a_max = 0.999 * v0
    a_min = 1e-4
    if not resistance_at(a_min) < 0 or not resistance_at(a_max) > 0:
        logger.warning(f"No describing-function balance between {a_min} and {a_max:.3f} V")
        return None

    a0 = float(brentq(resistance_at, a_min, a_max, xtol=1e-7))
    f0 = frequency_at(a0)
    w0 = 2.0 * np.pi * f0

    da = 1e-3 * a0
    dw = 1e-4 * w0
    dz_da = (loop(a0 + da, f0) - loop(a0 - da, f0)) / (2 * da)
    dz_dw = (loop(a0, (w0 + dw) / (2 * np.pi)) - loop(a0, (w0 - dw) / (2 * np.pi))) / (2 * dw)
    margin = dz_da.real * dz_dw.imag - dz_da.imag * dz_dw.real

    r_l = circuit.load_resistance
    divider = r_l / (r_l + 1.0 / (1j * w0 * circuit.dc_block_capacitance))
    p_load = 0.5 * (a0 * abs(divider)) ** 2 / r_l
    return KurokawaReport(
        amplitude=a0,
        frequency=f0,
        stability_margin=float(margin),
        stable=bool(margin > 0),
        predicted_load_power_dbm=10.0 * math.log10(p_load / 1e-3),
    )


def _pack(jobs: Sequence[TransientJob]) -> _Batch:
    circuits = [job.circuit for job in jobs]

    def col(getter) -> np.ndarray:
        return np.array([getter(c) for c in circuits], dtype=float)

    diode = SimpleNamespace(**{
        name: col(lambda c, n=name: getattr(c.diode, n))
        for name in ("peak_current", "peak_voltage", "valley_current", "valley_voltage",
                     "saturation_current", "thermal_voltage", "excess_coefficient")
    })
    return _Batch(
        diode=diode,
        cj0=col(lambda c: c.diode.junction_capacitance),
        cj_k=col(lambda c: c.diode.capacitance_voltage_coefficient),
        vbias=col(lambda c: c.bias_voltage),
        rs=col(lambda c: c.series_resistance),
        inv_lch=1.0 / col(lambda c: c.choke_inductance),
        inv_cs=1.0 / col(lambda c: c.smoothing_capacitance),
        inv_lld=1.0 / col(lambda c: c.lead_inductance),
        inv_rl=1.0 / col(lambda c: c.load_resistance),
        inv_cb=1.0 / col(lambda c: c.dc_block_capacitance),
    )


def _derivative(y: np.ndarray, b: _Batch) -> np.ndarray:
    # y rows: choke current, node A voltage, lead current, junction voltage, block voltage
    i_ch, v_a, i_ld, v_b, v_cb = y
    d = np.empty_like(y)
    d[0] = (b.vbias - b.rs * i_ch - v_a) * b.inv_lch
    d[1] = (i_ch - i_ld) * b.inv_cs
    d[2] = (v_a - v_b) * b.inv_lld
    i_load = (v_b - v_cb) * b.inv_rl
    cj = b.cj0 * np.maximum(1.0 + b.cj_k * v_b, 0.1)
    d[3] = (i_ld - _current(b.diode, v_b) - i_load) / cj
    d[4] = i_load * b.inv_cb
    return d


def _initial_state(jobs: Sequence[TransientJob], settings: SimulationSettings) -> np.ndarray:
    y = np.zeros((5, len(jobs)))
    for col, job in enumerate(jobs):
        rng = np.random.default_rng(job.seed)
        kick = settings.startup_noise * rng.standard_normal()
        if settings.startup == "power_on":
            y[3, col] = kick
            continue
        v0 = dc_operating_point(job.circuit)
        i0 = float(_current(job.circuit.diode, v0))
        y[:, col] = (i0, v0, i0, v0 + kick, v0)
    return y


def simulate_batch(jobs: Sequence[TransientJob], duration: Optional[float] = None,
                   settings: Optional[SimulationSettings] = None
                   ) -> List[Union[TransientTrace, StepUnstable]]:
    """
    Integrate many independent circuits in lock-step with fixed-step RK4.

    All rows share the step and sampling grid; each row only ever touches its
    own column, so its trace is the same whatever else is in the batch. A row
    whose state leaves the blow-up limit is frozen and reported as a
    StepUnstable instance in its slot.
    """
    settings = settings or SimulationSettings()
    if not jobs:
        return []
    dt = settings.sample_interval
    n_samples = settings.n_samples if duration is None else int(round(duration / dt))
    if n_samples < 2:
        raise InvalidInput(f"duration {duration} s is shorter than two samples")

    substeps = settings.substeps
    h = settings.step
    batch = _pack(jobs)
    y = _initial_state(jobs, settings)
    out = np.empty((n_samples, len(jobs)))
    out[0] = y[3] - y[4]
    faults = {}

    logger.debug(f"RK4: {len(jobs)} rows, {n_samples} samples, {substeps} steps/sample, h={h:.3e} s")
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_samples):
            for _ in range(substeps):
                k1 = _derivative(y, batch)
                k2 = _derivative(y + (0.5 * h) * k1, batch)
                k3 = _derivative(y + (0.5 * h) * k2, batch)
                k4 = _derivative(y + h * k3, batch)
                y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = ~(np.abs(y) <= settings.blowup_limit).all(axis=0)
            if bad.any():
                for col in np.flatnonzero(bad):
                    faults[int(col)] = k * dt
                    logger.warning(f"Row {col} exceeded {settings.blowup_limit} V at t={k * dt:.3e} s")
                y[:, bad] = 0.0
                batch.vbias = np.where(bad, 0.0, batch.vbias)
            out[k] = y[3] - y[4]

    results: List[Union[TransientTrace, StepUnstable]] = []
    for col, job in enumerate(jobs):
        if col in faults:
            results.append(StepUnstable(
                f"integration blew up at t={faults[col]:.3e} s "
                f"(bias {job.circuit.bias_voltage:.4f} V, seed {job.seed})",
                time=faults[col],
            ))
            continue
        results.append(TransientTrace(dt, out[:, col].copy(), job.circuit.bias_voltage, job.seed))
    return results


def simulate_transient(circuit: OscillatorCircuit, duration: Optional[float] = None, seed: int = 0,
                       settings: Optional[SimulationSettings] = None) -> TransientTrace:
    """
    Integrate one board and return its load-voltage trace.

    Raises:
        StepUnstable: if any state leaves the blow-up limit.
    """
    settings = settings or SimulationSettings()
    span = settings.duration if duration is None else duration
    if not span > 0:
        raise InvalidInput(f"duration must be positive, got {duration}")

    verdict = startup_check(circuit)
    if verdict.oscillating and span * verdict.resonant_frequency < 200:
        logger.warning(
            f"Duration {span:.3e} s covers only {span * verdict.resonant_frequency:.0f} periods "
            f"of {verdict.resonant_frequency / 1e6:.1f} MHz"
        )

    result = simulate_batch([TransientJob(circuit, seed)], duration=span, settings=settings)[0]
    if isinstance(result, StepUnstable):
        raise result
    return result


def _carrier_frequency(trace: TransientTrace, dc_cutoff: float) -> Optional[float]:
    v = trace.load_voltage - np.mean(trace.load_voltage)
    power = np.abs(np.fft.rfft(v * np.hanning(v.size))) ** 2
    freqs = np.fft.rfftfreq(v.size, trace.sample_interval)
    mask = freqs >= dc_cutoff
    if not mask.any() or not np.any(power[mask] > 0):
        return None
    return float(freqs[mask][np.argmax(power[mask])])


def envelope(trace: TransientTrace, cutoff: float) -> np.ndarray:
    """Full-wave rectification followed by a single-pole low-pass at ``cutoff``."""
    alpha = 1.0 - math.exp(-2.0 * math.pi * cutoff * trace.sample_interval)
    return lfilter([alpha], [1.0, alpha - 1.0], np.abs(trace.load_voltage))


def _count_bursts(env: np.ndarray, ratio: float) -> int:
    top = float(env.max())
    if top <= 0:
        return 0
    peaks, _ = find_peaks(env, prominence=0.1 * top)
    bounds = np.concatenate(([0], peaks, [env.size - 1]))
    cycles = 0
    for idx, p in enumerate(peaks):
        left = float(env[bounds[idx]:p + 1].min())
        right = float(env[p:bounds[idx + 2] + 1].min())
        if env[p] > ratio * max(left, right, np.finfo(float).tiny):
            cycles += 1
    return cycles


def _growth(trace: TransientTrace, late_rms: float) -> float:
    """Late-window RMS over the RMS of the second quarter of the record."""
    n = len(trace)
    early = trace.load_voltage[n // 4:n // 2]
    early_rms = float(np.sqrt(np.mean(early ** 2))) if early.size else 0.0
    if early_rms == 0.0:
        return 1.0 if late_rms == 0.0 else math.inf
    return late_rms / early_rms


def classify_regime(trace: TransientTrace, thresholds: Optional[RegimeThresholds] = None) -> RegimeLabel:
    """
    Label a trace Quiescent, SteadyOscillation or Bursty.

    Quiescent when the steady-state RMS is below the noise floor; Bursty when
    the envelope shows at least ``min_burst_cycles`` rise-decay cycles whose
    peak/trough ratio exceeds ``burst_ratio``.
    ``starting`` is also set for a quiescent trace whose envelope is still
    growing past ``growth_ratio``.
    """
    th = thresholds or RegimeThresholds()
    if len(trace) < MIN_TRACE_SAMPLES:
        logger.warning(f"Classifying a {len(trace)}-sample trace; {MIN_TRACE_SAMPLES} expected")

    steady = trace.steady_state(th.steady_fraction)
    rms = float(np.sqrt(np.mean(steady ** 2)))
    growth = _growth(trace, rms)
    if rms < th.rms_floor:
        return RegimeLabel(Regime.QUIESCENT, rms, 0.0, 0.0, 0, rms, growth, growth > th.growth_ratio)

    carrier = _carrier_frequency(trace, th.dc_cutoff)
    if carrier is None:
        return RegimeLabel(Regime.QUIESCENT, rms, 0.0, 0.0, 0, rms, growth, growth > th.growth_ratio)

    env = envelope(trace, carrier / th.envelope_divisor)
    tail = env[int(round(env.size * (1.0 - th.steady_fraction))):]
    cycles = _count_bursts(env, th.burst_ratio)
    label = Regime.BURSTY if cycles >= th.min_burst_cycles else Regime.STEADY
    return RegimeLabel(
        label=label,
        mean=float(np.mean(tail)),
        variance=float(np.var(tail)),
        burst_rate=cycles / trace.duration,
        burst_cycles=cycles,
        steady_rms=rms,
        growth=growth,
        starting=True,
    )


def write_trace_csv(trace: TransientTrace, path, comment: Optional[str] = None):
    """Write ``time_s,voltage_V`` rows."""
    return write_columns(path, ["time_s", "voltage_V"], [trace.times(), trace.load_voltage], comment)
