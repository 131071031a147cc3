"""
Simulate Stage for tdh

Runs one transient of the configured board at one bias and writes the
trace, its spectrum, the harmonic set and the regime verdict.
"""

import logging
import time
from pathlib import Path
from typing import Any, Dict

from base import BaseStage
from tdh.circuit_sim import (
    board_dc_power,
    classify_regime,
    kurokawa_check,
    resonator_resonance,
    simulate_transient,
    startup_check,
    write_trace_csv,
)
from tdh.config import config_hash
from tdh.errors import NoSignal, TDHError
from tdh.io import provenance_comment, write_json
from tdh.spectral import (
    compute_spectrum,
    dc_rf_efficiency,
    extract_harmonics,
    find_fundamental,
    rbw_smooth,
    write_spectrum_csv,
)

logger = logging.getLogger(__name__)


class SimulateStage(BaseStage):
    """Single-bias transient simulation and spectral readout."""

    @property
    def name(self) -> str:
        return "simulate"

    @property
    def version(self) -> str:
        return "1.0.0"

    def run(self, config, outdir: str, **kwargs) -> Dict[str, Any]:
        """
        Args:
            config: RunConfig
            outdir: Output directory
            **kwargs: kurokawa (bool) adds the large-signal stability diagnostic

        Returns:
            Dict with standardized stage results
        """
        start_time = time.time()
        output_dir = Path(outdir)
        output_dir.mkdir(parents=True, exist_ok=True)

        board = config.board_id
        chash = config_hash(config)
        comment = provenance_comment(chash, config.seed)
        summary: Dict[str, Any] = {"board": board, "config_hash": chash, "seed": config.seed}
        artifacts = []
        success = False

        try:
            circuit = config.resolve_circuit()
            summary["bias_voltage"] = circuit.bias_voltage
            logger.info(f"Simulating {board} at {circuit.bias_voltage:.4f} V (seed {config.seed})")

            verdict = startup_check(circuit)
            summary["startup"] = {
                "oscillating": verdict.oscillating,
                "resonant_frequency_Hz": verdict.resonant_frequency,
                "net_resistance_ohm": verdict.net_resistance_at_resonance,
                "resonator_resonance_Hz": resonator_resonance(circuit),
            }
            if kwargs.get("kurokawa"):
                report = kurokawa_check(circuit)
                summary["kurokawa"] = None if report is None else {
                    "amplitude_V": report.amplitude,
                    "frequency_Hz": report.frequency,
                    "stable": report.stable,
                    "predicted_load_power_dBm": report.predicted_load_power_dbm,
                }

            settings = config.simulation
            trace = simulate_transient(circuit, settings.duration, config.seed, settings)
            regime = classify_regime(trace, config.regime)
            summary["regime"] = regime.label.value
            summary["envelope"] = {"mean": regime.mean, "variance": regime.variance, "burst_rate": regime.burst_rate}

            opts = config.spectral
            spectrum = compute_spectrum(trace, opts.window, circuit.load_resistance, span=opts.span)
            if opts.rbw is not None:
                spectrum = rbw_smooth(spectrum, opts.rbw)

            artifacts.append(str(write_trace_csv(trace, output_dir / "trace.csv", comment)))
            artifacts.append(str(write_spectrum_csv(spectrum, output_dir / "spectrum.csv", comment)))

            try:
                f0, p0 = find_fundamental(spectrum, opts.noise_floor)
                harmonics = extract_harmonics(spectrum, f0, opts.rel_tolerance, opts.noise_floor)
                dc = board_dc_power(circuit)
                summary["fundamental_Hz"] = f0
                summary["fundamental_dBm"] = p0
                summary["harmonic_orders"] = harmonics.orders
                summary["efficiency"] = dc_rf_efficiency(1e-3 * 10 ** (p0 / 10), dc) if dc > 0 else None
                records = harmonics.to_records()
            except NoSignal:
                summary["fundamental_Hz"] = None
                records = []

            artifacts.append(str(write_json(output_dir / "harmonics.json", {
                "config_hash": chash, "seed": config.seed, "board": board, "harmonics": records,
            })))
            success = True
            logger.info(f"{board}: {summary['regime']}, fundamental {summary['fundamental_Hz']}")

        except TDHError as e:
            summary["error"] = f"{type(e).__name__}: {e}"
            logger.error(summary["error"])
        except Exception as e:
            summary["error"] = f"Simulation failed: {e}"
            logger.error(summary["error"])

        return self._result(board, start_time, success, summary, artifacts)
