"""
Board presets and reference measurements.

The five boards share one diode model and differ in junction capacitance,
its bias coefficient, lead inductance and coupling capacitor. Values are
fitted so each board's simulated fundamental at 200 mV lands on its measured
one and the boards start oscillating within a few millivolts of the NDR
edge; they are lumped stand-ins, not measured parasitics.
"""

from typing import Dict, List, Tuple

from tdh.circuit_sim import OscillatorCircuit
from tdh.errors import InvalidInput
from tdh.link_budget import AntennaGainMask, WirelessSetup


def _board(cj0: float, k: float, lead: float, block: float) -> OscillatorCircuit:
    return OscillatorCircuit().updated(
        diode={"junction_capacitance": cj0, "capacitance_voltage_coefficient": k},
        lead_inductance=lead,
        dc_block_capacitance=block,
    )


BOARD_PRESETS: Dict[str, OscillatorCircuit] = {
    "board1": _board(5.62e-12, 2.0, 5.348e-9, 1.368e-12),
    "board2": _board(4.63e-12, 0.4, 2.716e-9, 0.778e-12),
    "board3": _board(9.27e-12, 0.0, 5.88e-9, 1.555e-12),
    "board4": _board(16.8e-12, 0.3, 8.68e-9, 2.082e-12),
    "board5": _board(30.45e-12, 0.2, 16.45e-9, 3.816e-12),
}

# Board1 behind a 1 uH choke and 1 nF smoothing capacitor, biased just inside
# the NDR region: the bias network relaxes at a few MHz and quenches the RF
# tank, giving pulse-train (squegging) output with a spread spectrum.
VARIANT_PRESETS: Dict[str, OscillatorCircuit] = {
    "board1_squegging": BOARD_PRESETS["board1"].updated(
        choke_inductance=1e-6,
        smoothing_capacitance=1e-9,
        bias_voltage=0.115,
    ),
}

# Cabled fundamental at 200 mV: (Hz, dBm)
MEASURED_FUNDAMENTALS: Dict[str, Tuple[float, float]] = {
    "board1": (727.2e6, -11.80),
    "board2": (1283e6, -12.87),
    "board3": (638.7e6, -11.65),
    "board4": (384.9e6, -8.559),
    "board5": (210.0e6, -10.65),
}

# Best efficiency per board: (efficiency %, DC power W, bias V)
MEASURED_EFFICIENCY: Dict[str, Tuple[float, float, float]] = {
    "board1": (30.04, 664.6e-6, 0.2959),
    "board2": (23.53, 597.7e-6, 0.2731),
    "board3": (26.53, 758.5e-6, 0.2799),
    "board4": (29.58, 779.6e-6, 0.2874),
    "board5": (17.63, 782.3e-6, 0.2529),
}

# Wideband horn used for the wireless spectra: under 0 dBi below ~700 MHz
HORN_GAIN_POINTS: List[Tuple[float, float]] = [
    (50e6, -20.0),
    (300e6, -8.0),
    (500e6, -3.0),
    (700e6, 0.0),
    (1e9, 7.0),
    (2e9, 9.0),
    (3e9, 10.0),
]

HORN_GAIN_MASK = AntennaGainMask(points=HORN_GAIN_POINTS)
CHAMBER_SETUP = WirelessSetup(antenna_mask=HORN_GAIN_MASK)


def preset_names(variants: bool = False) -> List[str]:
    """Board preset names; ``variants`` adds the bias-network variants."""
    names = list(BOARD_PRESETS)
    return names + list(VARIANT_PRESETS) if variants else names


def get_preset(name: str) -> OscillatorCircuit:
    try:
        return BOARD_PRESETS[name] if name in BOARD_PRESETS else VARIANT_PRESETS[name]
    except KeyError:
        raise InvalidInput(f"unknown board preset '{name}', expected one of "
                           f"{', '.join(preset_names(variants=True))}") from None
