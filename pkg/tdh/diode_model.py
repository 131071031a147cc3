"""
Tunnel Diode Model for tdh

Three-term Esaki current-voltage model (tunnel + excess + thermal), its
analytic derivative, NDR-interval analysis and least-squares calibration
against sampled IV points.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import brentq, least_squares

from tdh.errors import FitDiverged, InvalidInput, NoNDR

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Absolute voltage tolerance for NDR endpoints
NDR_XTOL = 1e-6

# Parameters least_squares adjusts unless the caller says otherwise
DEFAULT_FIT_FIELDS = ("peak_current", "peak_voltage", "valley_current", "excess_coefficient")


class DiodeParams(BaseModel):
    """
    Esaki diode parameters.

    Defaults are an AI101E stand-in tuned so that the DC power at 200 mV and
    near the valley matches the measured board consumption, with both NDR
    edges close to where the boards start and stop oscillating.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    peak_current: float = Field(3.5e-3, gt=0, description="A")
    peak_voltage: float = Field(0.0925, gt=0, description="V")
    valley_current: float = Field(1.05e-3, gt=0, description="A")
    valley_voltage: float = Field(0.310, gt=0, description="V")
    saturation_current: float = Field(1e-12, gt=0, description="A")
    thermal_voltage: float = Field(0.026, gt=0, description="V")
    excess_coefficient: float = Field(11.5, gt=0, description="1/V")
    junction_capacitance: float = Field(2.8e-12, gt=0, description="F at 0 V")
    capacitance_voltage_coefficient: float = Field(0.0, ge=0, description="1/V")

    @model_validator(mode="after")
    def _check_ordering(self) -> "DiodeParams":
        if self.peak_voltage >= self.valley_voltage:
            raise ValueError("peak_voltage must be below valley_voltage")
        return self


@dataclass(frozen=True)
class IVCurve:
    """Ordered (voltage, current) samples."""

    voltages: np.ndarray
    currents: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.voltages, dtype=float)
        i = np.asarray(self.currents, dtype=float)
        if v.ndim != 1 or v.shape != i.shape:
            raise InvalidInput("voltages and currents must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(i))):
            raise InvalidInput("IV curve contains non-finite values")
        if v.size > 1 and np.any(np.diff(v) <= 0):
            raise InvalidInput("IV curve voltages must be strictly increasing")
        object.__setattr__(self, "voltages", v)
        object.__setattr__(self, "currents", i)

    def __len__(self) -> int:
        return int(self.voltages.size)

    @property
    def points(self):
        return list(zip(self.voltages.tolist(), self.currents.tolist()))


@dataclass(frozen=True)
class CalibrationResult:
    params: DiodeParams
    residual_rms: float
    initial_rms: float
    nfev: int


def _current(params: DiodeParams, v: ArrayLike) -> ArrayLike:
    """Unchecked, vectorised diode current."""
    x = v / params.peak_voltage
    tunnel = params.peak_current * x * np.exp(1.0 - x)
    a = params.excess_coefficient
    excess = params.valley_current * (
        np.exp(a * (v - params.valley_voltage)) - np.exp(-a * params.valley_voltage)
    )
    thermal = params.saturation_current * np.expm1(v / params.thermal_voltage)
    return tunnel + excess + thermal


def _conductance(params: DiodeParams, v: ArrayLike) -> ArrayLike:
    """Unchecked, vectorised dI/dV."""
    x = v / params.peak_voltage
    tunnel = params.peak_current / params.peak_voltage * (1.0 - x) * np.exp(1.0 - x)
    a = params.excess_coefficient
    excess = a * params.valley_current * np.exp(a * (v - params.valley_voltage))
    thermal = params.saturation_current / params.thermal_voltage * np.exp(v / params.thermal_voltage)
    return tunnel + excess + thermal


def _check_voltage(v: ArrayLike) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"voltage must be finite, got {v!r}")
    if np.any(arr < 0):
        raise InvalidInput(f"reverse bias is not modelled, got {v!r}")
    return arr


def _as_output(arr: np.ndarray, like: ArrayLike) -> ArrayLike:
    return float(arr) if np.ndim(like) == 0 else arr


def iv_current(params: DiodeParams, v: ArrayLike) -> ArrayLike:
    """Diode current in amperes at forward voltage v (scalar or array)."""
    arr = _check_voltage(v)
    return _as_output(_current(params, arr), v)


def differential_conductance(params: DiodeParams, v: ArrayLike) -> ArrayLike:
    """Analytic dI/dV in siemens."""
    arr = _check_voltage(v)
    return _as_output(_conductance(params, arr), v)


def dc_power(params: DiodeParams, v: ArrayLike) -> ArrayLike:
    """DC power drawn at voltage v, in watts."""
    arr = _check_voltage(v)
    return _as_output(arr * _current(params, arr), v)


def junction_capacitance(params: DiodeParams, v: ArrayLike) -> ArrayLike:
    """Incremental junction capacitance Cj0 * (1 + k*v), floored at 10% of Cj0."""
    scale = np.maximum(1.0 + params.capacitance_voltage_coefficient * np.asarray(v, dtype=float), 0.1)
    return _as_output(params.junction_capacitance * scale, v)


def ndr_region(params: DiodeParams, samples: int = 4001) -> Tuple[float, float]:
    """
    Locate the negative differential resistance interval.

    dI/dV is sampled on (0, 2*valley_voltage); the single falling and rising
    sign changes are refined with brentq to 1 uV.

    Raises:
        NoNDR: if the curve is monotone or its shape is not a single peak/valley.
    """
    if params.peak_current <= params.valley_current:
        raise NoNDR(
            f"peak current {params.peak_current:.3e} A does not exceed "
            f"valley current {params.valley_current:.3e} A"
        )

    v = np.linspace(0.0, 2.0 * params.valley_voltage, samples)[1:]
    g = _conductance(params, v)
    negative = g < 0
    if not negative.any():
        raise NoNDR("dI/dV never changes sign on (0, 2*valley_voltage)")

    edges = np.flatnonzero(np.diff(negative.astype(np.int8)))
    falling = [k for k in edges if negative[k + 1]]
    rising = [k for k in edges if not negative[k + 1]]
    if len(falling) != 1 or len(rising) != 1 or rising[0] < falling[0]:
        raise NoNDR(f"expected one peak and one valley, found {len(falling)} and {len(rising)}")

    def g_scalar(x: float) -> float:
        return float(_conductance(params, x))

    k_low, k_high = falling[0], rising[0]
    v_low = brentq(g_scalar, v[k_low], v[k_low + 1], xtol=NDR_XTOL)
    v_high = brentq(g_scalar, v[k_high], v[k_high + 1], xtol=NDR_XTOL)
    return float(v_low), float(v_high)


def sample_iv_curve(params: DiodeParams, v_start: float = 0.0, v_stop: float = 0.4,
                    points: int = 401) -> IVCurve:
    """Evaluate the model on a uniform voltage grid."""
    v = np.linspace(v_start, v_stop, points)
    return IVCurve(v, np.asarray(iv_current(params, v)))


def calibrate_from_samples(
    curve: IVCurve,
    initial: DiodeParams,
    fit: Sequence[str] = DEFAULT_FIT_FIELDS,
    max_nfev: int = 2000,
) -> CalibrationResult:
    """
    Fit the Esaki model to sampled IV points.

    Only the fields named in ``fit`` move; the excess reference voltage and
    the thermal pair are otherwise held at ``initial`` since the excess
    prefactor and its reference voltage are not separately identifiable.

    Raises:
        InvalidInput: fewer than 8 points.
        FitDiverged: the residual did not improve on ``initial``.
    """
    if len(curve) < 8:
        raise InvalidInput(f"calibration needs at least 8 points, got {len(curve)}")
    unknown = set(fit) - set(DiodeParams.model_fields)
    if unknown:
        raise InvalidInput(f"unknown diode fields: {sorted(unknown)}")

    fields = list(fit)
    base = initial.model_dump()
    scale = max(float(np.max(np.abs(curve.currents))), 1e-12)
    x0 = np.log([base[name] for name in fields])

    def build(x: np.ndarray) -> Dict[str, float]:
        values = dict(base)
        values.update({name: float(np.exp(val)) for name, val in zip(fields, x)})
        return values

    def residuals(x: np.ndarray) -> np.ndarray:
        values = build(x)
        if values["peak_voltage"] >= values["valley_voltage"]:
            return np.full(len(curve), 1e3)
        trial = DiodeParams.model_construct(**values)
        with np.errstate(over="ignore", invalid="ignore"):
            r = (_current(trial, curve.voltages) - curve.currents) / scale
        return np.where(np.isfinite(r), r, 1e3)

    initial_r = residuals(x0)
    initial_rms = float(np.sqrt(np.mean(initial_r ** 2)) * scale)

    result = least_squares(residuals, x0, method="trf", x_scale="jac", max_nfev=max_nfev,
                           xtol=1e-14, ftol=1e-14, gtol=1e-14)
    final_rms = float(np.sqrt(np.mean(result.fun ** 2)) * scale)

    if not np.isfinite(final_rms) or (initial_rms > 0.0 and not final_rms < initial_rms):
        raise FitDiverged(
            f"residual RMS {final_rms:.3e} A did not improve on {initial_rms:.3e} A "
            f"after {result.nfev} evaluations"
        )

    try:
        fitted = DiodeParams(**build(result.x))
    except ValueError as e:
        raise FitDiverged(f"fit left the valid parameter space: {e}") from e

    logger.info(f"Calibrated {fields}: residual RMS {initial_rms:.3e} -> {final_rms:.3e} A "
                f"({result.nfev} evaluations)")
    return CalibrationResult(fitted, final_rms, initial_rms, int(result.nfev))


def write_iv_csv(curve: IVCurve, path: Union[str, Path], comment: Optional[str] = None) -> Path:
    """Write ``voltage_V,current_A`` rows with a header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.writer(f)
        writer.writerow(["voltage_V", "current_A"])
        for v, i in zip(curve.voltages, curve.currents):
            writer.writerow([repr(float(v)), repr(float(i))])
    return path


def read_iv_csv(path: Union[str, Path]) -> IVCurve:
    """Read a ``voltage_V,current_A`` CSV; '#' lines are skipped."""
    with open(path, newline="") as f:
        rows = [line for line in f if line.strip() and not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["voltage_V", "current_A"]:
        raise InvalidInput(f"{path}: expected header 'voltage_V,current_A', got {header}")
    data = np.array([[float(a), float(b)] for a, b in reader], dtype=float).reshape(-1, 2)
    return IVCurve(data[:, 0], data[:, 1])
