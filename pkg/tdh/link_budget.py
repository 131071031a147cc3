"""
Link Budget for tdh

Friis free-space budgets for a harmonic-emitting tag: how far away a reader
of given sensitivity still hears each harmonic (reverse link) and how far a
reader can power the tag (forward link).
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from tdh.errors import InfeasibleAtContact, NonPositiveInput

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

# Ranges shorter than this are reported as zero / infeasible
MIN_DISTANCE = 0.1


class AntennaGainMask(BaseModel):
    """Antenna gain in dBi versus frequency, interpolated in log-frequency and held flat outside."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    points: List[Tuple[float, float]] = Field(..., min_length=2)

    @field_validator("points")
    @classmethod
    def _sorted(cls, points):
        freqs = [f for f, _ in points]
        if any(f <= 0 for f in freqs):
            raise ValueError("mask frequencies must be positive")
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("mask frequencies must be strictly increasing")
        return points

    def gain(self, frequency: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        f = np.log10(np.maximum(np.asarray(frequency, dtype=float), 1.0))
        xs = np.log10([p[0] for p in self.points])
        ys = [p[1] for p in self.points]
        out = np.interp(f, xs, ys)
        return float(out) if np.ndim(frequency) == 0 else out


class WirelessSetup(BaseModel):
    """Cabled-to-wireless conversion: two antennas at a fixed spacing plus cable losses."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    antenna_mask: AntennaGainMask
    distance: float = Field(1.63, gt=0, description="m")
    tx_cable_loss: float = Field(3.68, ge=0, description="dB")
    rx_cable_loss: float = Field(2.24, ge=0, description="dB")


class ReverseLinkParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    harmonic_powers: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(727.2e6, -11.80)],
        description="(frequency Hz, tag output dBm) per harmonic",
    )
    tag_antenna_gain: float = Field(3.0, description="dBi")
    tag_gain_mask: Optional[AntennaGainMask] = None
    reader_antenna_gain: float = Field(3.0, description="dBi")
    reader_sensitivity: float = Field(-90.0, description="dBm")

    @field_validator("harmonic_powers")
    @classmethod
    def _positive_frequencies(cls, rows):
        for f, _ in rows:
            if f <= 0:
                raise ValueError(f"harmonic frequency must be positive, got {f}")
        return rows

    def tag_gain(self, frequency: float) -> float:
        if self.tag_gain_mask is None:
            return self.tag_antenna_gain
        return self.tag_gain_mask.gain(frequency)


class ForwardLinkParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tx_power: float = Field(1.0, gt=0, description="W")
    reader_antenna_gain: float = Field(3.0, description="dBi")
    tag_antenna_gain: float = Field(3.0, description="dBi")
    rectification_efficiency: float = Field(0.30, gt=0, le=1)
    tag_consumption: float = Field(524.6e-6, gt=0, description="W")
    carrier_frequency: float = Field(415e6, gt=0, description="Hz")
    # 415 MHz is back-computed from the 524.6 uW / 2.74 m pair, not a stated value
    carrier_inferred: bool = True


@dataclass(frozen=True)
class LinkPoint:
    distance: float
    received_dbm: float
    harvested_watts: float


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0 or not math.isfinite(value):
            raise NonPositiveInput(f"{name} must be positive and finite, got {value}")


def fspl_db(frequency: float, distance: float) -> float:
    """Free-space path loss 20*log10(4*pi*d*f/c) in dB."""
    _require_positive(frequency=frequency, distance=distance)
    return 20.0 * math.log10(4.0 * math.pi * distance * frequency / SPEED_OF_LIGHT)


def received_power_dbm(tx_dbm: float, gains: Tuple[float, float], frequency: float, distance: float) -> float:
    """Friis: transmit power plus both antenna gains minus free-space loss."""
    return tx_dbm + gains[0] + gains[1] - fspl_db(frequency, distance)


def watts_to_dbm(watts: float) -> float:
    _require_positive(power=watts)
    return 10.0 * math.log10(watts / 1e-3)


def dbm_to_watts(dbm: float) -> float:
    return 1e-3 * 10.0 ** (dbm / 10.0)


def _threshold_distance(margin_db: float, frequency: float) -> float:
    """Distance at which free-space loss equals ``margin_db``."""
    return SPEED_OF_LIGHT / (4.0 * math.pi * frequency) * 10.0 ** (margin_db / 20.0)


def reverse_range(params: ReverseLinkParams) -> List[Tuple[float, float]]:
    """
    Maximum detection distance per harmonic.

    Harmonics that already fall below the reader sensitivity at 0.1 m are
    reported with range 0.
    """
    ranges = []
    for frequency, power in params.harmonic_powers:
        margin = power + params.tag_gain(frequency) + params.reader_antenna_gain - params.reader_sensitivity
        distance = _threshold_distance(margin, frequency)
        if distance < MIN_DISTANCE:
            logger.debug(f"{frequency / 1e6:.1f} MHz is below sensitivity at contact range")
            distance = 0.0
        ranges.append((frequency, distance))
    return ranges


def harvested_power(params: ForwardLinkParams, distance: float) -> float:
    """DC power available to the tag after rectification at ``distance``, in watts."""
    rx = received_power_dbm(
        watts_to_dbm(params.tx_power),
        (params.reader_antenna_gain, params.tag_antenna_gain),
        params.carrier_frequency,
        distance,
    )
    return params.rectification_efficiency * dbm_to_watts(rx)


def forward_range(params: ForwardLinkParams) -> float:
    """
    Maximum distance at which the rectified carrier covers the tag's consumption.

    Raises:
        InfeasibleAtContact: if the tag cannot be powered even at 0.1 m.
    """
    available_dbm = watts_to_dbm(params.tx_power * params.rectification_efficiency)
    margin = (available_dbm + params.reader_antenna_gain + params.tag_antenna_gain
              - watts_to_dbm(params.tag_consumption))
    distance = _threshold_distance(margin, params.carrier_frequency)
    if distance < MIN_DISTANCE:
        raise InfeasibleAtContact(
            f"{params.tag_consumption * 1e6:.1f} uW cannot be delivered at {MIN_DISTANCE} m "
            f"(range would be {distance:.3g} m)"
        )
    if params.carrier_inferred:
        logger.info(f"Forward range uses the inferred {params.carrier_frequency / 1e6:.0f} MHz carrier")
    return distance


def _check_distances(distances: Sequence[float]) -> None:
    for d in distances:
        _require_positive(distance=d)
    if any(b < a for a, b in zip(distances, distances[1:])):
        raise NonPositiveInput("distances must be sorted ascending")


def reverse_link_curves(params: ReverseLinkParams, distances: Sequence[float]) -> Dict[float, List[LinkPoint]]:
    """Received power at the reader versus distance, one curve per harmonic."""
    _check_distances(distances)
    curves = {}
    for frequency, power in params.harmonic_powers:
        gains = (params.tag_gain(frequency), params.reader_antenna_gain)
        curves[frequency] = [
            LinkPoint(d, received_power_dbm(power, gains, frequency, d), 0.0) for d in distances
        ]
    return curves


def link_curve(params: Union[ForwardLinkParams, ReverseLinkParams], distances: Sequence[float]) -> List[LinkPoint]:
    """
    Budget versus distance.

    Forward parameters give received carrier power at the tag and the
    rectified power; reverse parameters give the first harmonic's power at
    the reader (see reverse_link_curves for every harmonic).
    """
    if isinstance(params, ReverseLinkParams):
        if not params.harmonic_powers:
            return []
        return reverse_link_curves(params, distances)[params.harmonic_powers[0][0]]

    _check_distances(distances)
    tx_dbm = watts_to_dbm(params.tx_power)
    gains = (params.reader_antenna_gain, params.tag_antenna_gain)
    points = []
    for d in distances:
        rx = received_power_dbm(tx_dbm, gains, params.carrier_frequency, d)
        points.append(LinkPoint(d, rx, params.rectification_efficiency * dbm_to_watts(rx)))
    return points
