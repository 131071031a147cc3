"""
Spectral Analysis for tdh

Turns load-voltage traces into one-sided power spectra in dBm, then pulls
out the fundamental, its integer harmonics, tunability and DC-to-RF
efficiency.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.ndimage import uniform_filter1d
from scipy.signal import get_window

from tdh.circuit_sim import MIN_TRACE_SAMPLES, TransientTrace
from tdh.errors import InsufficientPoints, InvalidInput, NoSignal, TraceTooShort, ZeroDCPower
from tdh.io import write_columns
from tdh.link_budget import WirelessSetup, fspl_db

logger = logging.getLogger(__name__)

# Measurement span of the cabled sweeps
DEFAULT_SPAN = (50e3, 3e9)
DC_CUTOFF = 1e6
NOISE_FLOOR_DBM = -80.0
MAX_POINTS = 10001

# Stand-in for log10(0)
POWER_FLOOR_DBM = -300.0


class Window(str, Enum):
    RECTANGULAR = "Rectangular"
    HANN = "Hann"
    BLACKMAN_HARRIS = "BlackmanHarris"


_SCIPY_WINDOWS = {
    Window.RECTANGULAR: "boxcar",
    Window.HANN: "hann",
    Window.BLACKMAN_HARRIS: "blackmanharris",
}


class SpectralOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    window: Window = Window.HANN
    noise_floor: float = NOISE_FLOOR_DBM
    load_resistance: float = Field(50.0, gt=0)
    rel_tolerance: float = Field(0.02, gt=0, lt=0.5)
    span: Tuple[float, float] = DEFAULT_SPAN
    rbw: Optional[float] = Field(None, gt=0)
    max_points: int = Field(MAX_POINTS, ge=2)


@dataclass(frozen=True)
class Spectrum:
    """
    One-sided power spectrum in dBm into ``load_resistance``.

    Each bin holds the power of a sinusoid centred on it (coherent-gain
    corrected). Broadband power is the bin sum divided by ``enbw_bins``.
    """

    frequency_bins: np.ndarray
    power: np.ndarray
    resolution_bandwidth: float
    span: Tuple[float, float]
    load_resistance: float = 50.0
    enbw_bins: float = 1.0
    dc_cutoff: float = DC_CUTOFF

    def __post_init__(self):
        f = np.asarray(self.frequency_bins, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if f.ndim != 1 or f.shape != p.shape or f.size == 0:
            raise InvalidInput("frequency_bins and power must be non-empty 1-D arrays of equal length")
        if np.any(np.diff(f) <= 0):
            raise InvalidInput("frequency bins must be strictly increasing")
        if not np.all(np.isfinite(p)):
            raise InvalidInput("spectrum power must be finite")
        object.__setattr__(self, "frequency_bins", f)
        object.__setattr__(self, "power", p)

    def __len__(self) -> int:
        return int(self.frequency_bins.size)

    @property
    def bin_width(self) -> float:
        if len(self) < 2:
            return self.resolution_bandwidth
        return float(self.frequency_bins[1] - self.frequency_bins[0])

    @property
    def dc_mask(self) -> np.ndarray:
        """Bins flagged as DC (below the cutoff)."""
        return self.frequency_bins < self.dc_cutoff

    def linear_power(self) -> np.ndarray:
        return 1e-3 * 10.0 ** (self.power / 10.0)

    def total_power(self) -> float:
        """Power in the non-DC bins, in watts."""
        return float(np.sum(self.linear_power()[~self.dc_mask]) / self.enbw_bins)


@dataclass(frozen=True)
class Harmonic:
    order: int
    frequency: float
    power: float


@dataclass(frozen=True)
class HarmonicSet:
    fundamental: Tuple[float, float]
    harmonics: List[Harmonic] = field(default_factory=list)

    @property
    def orders(self) -> List[int]:
        return [h.order for h in self.harmonics]

    def to_records(self) -> List[Dict[str, float]]:
        f0, p0 = self.fundamental
        records = [{"order": 1, "frequency_Hz": f0, "power_dBm": p0}]
        records.extend({"order": h.order, "frequency_Hz": h.frequency, "power_dBm": h.power}
                       for h in self.harmonics)
        return records


def _to_dbm(watts: np.ndarray) -> np.ndarray:
    floor = 1e-3 * 10.0 ** (POWER_FLOOR_DBM / 10.0)
    return 10.0 * np.log10(np.maximum(watts, floor) / 1e-3)


def _crop(spectrum: Spectrum, span: Tuple[float, float]) -> Spectrum:
    start, stop = span
    if not start < stop:
        raise InvalidInput(f"span start must be below stop, got {span}")
    mask = (spectrum.frequency_bins >= start) & (spectrum.frequency_bins <= stop)
    if not mask.any():
        raise InvalidInput(f"span {span} contains no bins")
    upper = min(stop, float(spectrum.frequency_bins[-1]))
    return replace(spectrum, frequency_bins=spectrum.frequency_bins[mask], power=spectrum.power[mask],
                   span=(start, upper))


def compute_spectrum(trace: TransientTrace, window: Window = Window.HANN, load: float = 50.0,
                     span: Optional[Tuple[float, float]] = DEFAULT_SPAN,
                     steady_fraction: float = 0.25) -> Spectrum:
    """
    Power spectrum of the steady-state part of a trace.

    The DC bin holds the mean's power and is flagged through ``dc_mask``;
    the other bins are computed with the mean removed. ``span=None`` keeps
    0 Hz to Nyquist.

    Raises:
        TraceTooShort: fewer than 2**14 samples.
    """
    if len(trace) < MIN_TRACE_SAMPLES:
        raise TraceTooShort(f"trace has {len(trace)} samples, spectral analysis needs {MIN_TRACE_SAMPLES}")
    if not load > 0:
        raise InvalidInput(f"load must be positive, got {load}")

    x = trace.steady_state(steady_fraction)
    n = x.size
    w = get_window(_SCIPY_WINDOWS[Window(window)], n, fftbins=True)
    coherent_gain = float(np.sum(w)) / n
    enbw_bins = n * float(np.sum(w ** 2)) / float(np.sum(w)) ** 2

    mean = float(np.mean(x))
    spectrum = np.fft.rfft((x - mean) * w)
    watts = 2.0 * np.abs(spectrum) ** 2 / (n * coherent_gain) ** 2 / load
    watts[0] = mean ** 2 / load
    if n % 2 == 0:
        watts[-1] /= 2.0

    freqs = np.fft.rfftfreq(n, trace.sample_interval)
    full = Spectrum(
        frequency_bins=freqs,
        power=_to_dbm(watts),
        resolution_bandwidth=enbw_bins * float(freqs[1]),
        span=(0.0, float(freqs[-1])),
        load_resistance=load,
        enbw_bins=enbw_bins,
    )
    return full if span is None else _crop(full, span)


def rbw_smooth(spectrum: Spectrum, rbw: float) -> Spectrum:
    """Moving mean of linear power over ``rbw``; a no-op when rbw is at most one bin."""
    if not rbw > 0:
        raise InvalidInput(f"rbw must be positive, got {rbw}")
    width = int(round(rbw / spectrum.bin_width))
    if width <= 1:
        return spectrum
    smoothed = uniform_filter1d(spectrum.linear_power(), size=width, mode="nearest")
    return replace(spectrum, power=_to_dbm(smoothed),
                   resolution_bandwidth=max(spectrum.resolution_bandwidth, rbw))


def crop_and_decimate(spectrum: Spectrum, span: Optional[Tuple[float, float]] = None,
                      max_points: int = MAX_POINTS) -> Spectrum:
    """
    Restrict to ``span`` and max-pool groups of bins down to ``max_points``.

    Each pooled bin sits at the mean frequency of its group, so the grid
    stays uniform and peaks keep their power.
    """
    out = spectrum if span is None else _crop(spectrum, span)
    count = len(out)
    if count <= max_points:
        return out
    group = math.ceil(count / max_points)
    keep = (count // group) * group
    freqs = out.frequency_bins[:keep].reshape(-1, group).mean(axis=1)
    power = out.power[:keep].reshape(-1, group).max(axis=1)
    logger.debug(f"Decimated {count} bins by {group} to {freqs.size}")
    return replace(out, frequency_bins=freqs, power=power,
                   resolution_bandwidth=max(out.resolution_bandwidth, group * out.bin_width))


def find_fundamental(spectrum: Spectrum, noise_floor: float = NOISE_FLOOR_DBM) -> Tuple[float, float]:
    """
    Strongest non-DC bin.

    Raises:
        NoSignal: nothing above the DC cutoff rises above ``noise_floor``.
    """
    candidates = np.flatnonzero(~spectrum.dc_mask)
    if candidates.size == 0:
        raise NoSignal("spectrum has no bins above the DC cutoff")
    idx = candidates[np.argmax(spectrum.power[candidates])]
    if spectrum.power[idx] <= noise_floor:
        raise NoSignal(f"no bin above the {noise_floor} dBm noise floor")
    return float(spectrum.frequency_bins[idx]), float(spectrum.power[idx])


def refine_peak(spectrum: Spectrum, index: int) -> float:
    """Sub-bin peak frequency from a parabola through the dB values around ``index``."""
    if not 0 < index < len(spectrum) - 1:
        return float(spectrum.frequency_bins[index])
    left, centre, right = spectrum.power[index - 1:index + 2]
    curvature = left - 2.0 * centre + right
    if not np.isfinite(curvature) or curvature >= 0:
        return float(spectrum.frequency_bins[index])
    offset = float(np.clip(0.5 * (left - right) / curvature, -0.5, 0.5))
    return float(spectrum.frequency_bins[index] + offset * spectrum.bin_width)


def interpolated_fundamental(spectrum: Spectrum, noise_floor: float = NOISE_FLOOR_DBM) -> Tuple[float, float]:
    """``find_fundamental`` with the frequency refined between bins."""
    freq, power = find_fundamental(spectrum, noise_floor)
    idx = int(np.argmin(np.abs(spectrum.frequency_bins - freq)))
    return refine_peak(spectrum, idx), power


def extract_harmonics(spectrum: Spectrum, fundamental: float, rel_tolerance: float = 0.02,
                      noise_floor: float = NOISE_FLOOR_DBM) -> HarmonicSet:
    """
    Collect the strongest peak near each integer multiple of ``fundamental``.

    Order k is searched in [k*f*(1-tol), k*f*(1+tol)] for every k*f inside
    the span; orders with nothing above the floor are left out.
    """
    if not fundamental > 0:
        raise InvalidInput(f"fundamental must be positive, got {fundamental}")
    freqs = spectrum.frequency_bins
    f0_idx = int(np.argmin(np.abs(freqs - fundamental)))
    found = HarmonicSet(fundamental=(float(fundamental), float(spectrum.power[f0_idx])))

    k = 2
    while k * fundamental <= spectrum.span[1]:
        target = k * fundamental
        window = np.flatnonzero((freqs >= target * (1 - rel_tolerance)) & (freqs <= target * (1 + rel_tolerance)))
        if window.size:
            idx = window[np.argmax(spectrum.power[window])]
            if spectrum.power[idx] > noise_floor:
                found.harmonics.append(Harmonic(k, float(freqs[idx]), float(spectrum.power[idx])))
        k += 1
    return found


def dc_rf_efficiency(peak_output_power: float, dc_power: float) -> float:
    """Peak single-frequency RF output over consumed DC power."""
    if not dc_power > 0:
        raise ZeroDCPower(f"DC power must be positive, got {dc_power}")
    if peak_output_power < 0:
        raise InvalidInput(f"output power must be non-negative, got {peak_output_power}")
    return peak_output_power / dc_power


def peak_efficiency(points: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """(bias, efficiency) of the best point on an efficiency-versus-bias curve."""
    if not points:
        raise InsufficientPoints("efficiency curve is empty")
    return max(points, key=lambda p: p[1])


def tunable_range(points: Sequence[Tuple[float, float]]) -> float:
    """Spread of the fundamental over (bias, frequency) points, in hertz."""
    if len(points) < 2:
        raise InsufficientPoints(f"tunable range needs at least 2 points, got {len(points)}")
    freqs = [f for _, f in points]
    return float(max(freqs) - min(freqs))


def apply_gain_mask(spectrum: Spectrum, setup: WirelessSetup) -> Spectrum:
    """
    Wireless view of a cabled spectrum.

    Adds the transmit and receive antenna gains and subtracts free-space loss
    over ``setup.distance`` plus both cable losses, bin by bin.
    """
    freqs = spectrum.frequency_bins
    positive = freqs > 0
    gain = 2.0 * np.asarray(setup.antenna_mask.gain(np.where(positive, freqs, 1.0)))
    loss = np.array([fspl_db(f, setup.distance) if f > 0 else 0.0 for f in freqs])
    delta = gain - loss - setup.tx_cable_loss - setup.rx_cable_loss
    power = np.where(positive, spectrum.power + delta, spectrum.power)
    return replace(spectrum, power=np.maximum(power, POWER_FLOOR_DBM))


def write_spectrum_csv(spectrum: Spectrum, path, comment: Optional[str] = None):
    return write_columns(path, ["frequency_Hz", "power_dBm"], [spectrum.frequency_bins, spectrum.power], comment)
