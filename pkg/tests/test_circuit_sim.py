"""
Unit tests for the oscillator circuit simulation.
"""

import numpy as np
import pytest
from scipy.signal import find_peaks

from tdh.circuit_sim import (
    OscillatorCircuit,
    Regime,
    RegimeThresholds,
    SimulationSettings,
    TransientJob,
    TransientTrace,
    board_dc_power,
    classify_regime,
    dc_operating_point,
    envelope,
    kurokawa_check,
    resonator_resonance,
    simulate_batch,
    simulate_transient,
    small_signal_impedances,
    startup_check,
    write_trace_csv,
)
from tdh.diode_model import iv_current, ndr_region
from tdh.errors import InvalidInput, StepUnstable
from tdh.io import read_rows
from tdh.spectral import compute_spectrum, find_fundamental
from tdh.presets import MEASURED_FUNDAMENTALS, get_preset, preset_names

SHORT = SimulationSettings(n_samples=64)


class TestCircuitModels:
    def test_defaults_are_board1(self):
        assert OscillatorCircuit() == get_preset("board1")

    def test_bias_range(self):
        with pytest.raises(ValueError):
            OscillatorCircuit(bias_voltage=0.9)

    def test_updated_merges_diode_changes(self):
        base = OscillatorCircuit()
        changed = base.updated(diode={"junction_capacitance": 4e-12}, load_resistance=75.0)
        assert changed.diode.junction_capacitance == 4e-12
        assert changed.diode.peak_current == base.diode.peak_current
        assert changed.load_resistance == 75.0

    def test_settings_step(self):
        s = SimulationSettings()
        assert s.substeps == 8
        assert s.step == pytest.approx(1.25e-11)
        assert s.duration == pytest.approx(2 ** 14 * 1e-10)

    def test_rms_floor(self):
        assert RegimeThresholds().rms_floor == pytest.approx(22.36e-6, rel=1e-3)


class TestOperatingPoint:
    def test_solves_series_drop(self):
        c = get_preset("board1")
        v0 = dc_operating_point(c)
        assert v0 + c.series_resistance * iv_current(c.diode, v0) == pytest.approx(c.bias_voltage, abs=1e-9)
        assert v0 < c.bias_voltage

    def test_zero_bias(self):
        assert dc_operating_point(OscillatorCircuit(bias_voltage=0.0)) == 0.0

    def test_board_dc_power(self):
        assert board_dc_power(get_preset("board1")) == pytest.approx(529e-6, rel=0.02)


class TestStartup:
    @pytest.mark.parametrize("name", preset_names())
    def test_presets_oscillate_at_200mv(self, name):
        verdict = startup_check(get_preset(name))
        assert verdict.oscillating
        assert verdict.net_resistance_at_resonance < 0
        assert verdict.resonant_frequency == pytest.approx(MEASURED_FUNDAMENTALS[name][0], rel=0.25)

    def test_reactance_vanishes_at_resonance(self):
        c = get_preset("board1")
        f0 = startup_check(c).resonant_frequency
        z_res, z_dev = small_signal_impedances(c, f0)
        assert abs((z_res + z_dev).imag) < 0.1

    @pytest.mark.parametrize("bias", [0.0, 0.05, 0.35])
    def test_no_oscillation_outside_ndr(self, bias):
        assert not startup_check(get_preset("board1").with_bias(bias)).oscillating

    def test_frequency_must_be_positive(self):
        with pytest.raises(InvalidInput):
            small_signal_impedances(OscillatorCircuit(), 0.0)

    def test_resonator_tank_frequency(self):
        tank = get_preset("board1").updated(load_resistance=0.01)
        expected = 1.0 / (2 * np.pi * np.sqrt(tank.lead_inductance * tank.dc_block_capacitance))
        assert resonator_resonance(tank) == pytest.approx(expected, rel=0.02)


class TestKurokawa:
    def test_stable_steady_state(self):
        c = get_preset("board1")
        report = kurokawa_check(c)
        assert report is not None
        assert 0 < report.amplitude < dc_operating_point(c)
        assert report.frequency > 0
        assert report.stable

    def test_none_when_not_starting(self):
        assert kurokawa_check(get_preset("board1").with_bias(0.05)) is None


class TestTransient:
    def test_empty_batch(self):
        assert simulate_batch([]) == []

    def test_duration_shorter_than_two_samples(self):
        with pytest.raises(InvalidInput):
            simulate_batch([TransientJob(OscillatorCircuit(), 0)], duration=1e-10)

    def test_blowup_raises(self):
        with pytest.raises(StepUnstable) as exc:
            simulate_transient(OscillatorCircuit(), seed=0, settings=SHORT.model_copy(update={"blowup_limit": 0.01}))
        assert exc.value.time == pytest.approx(1e-10)

    def test_blowup_only_faults_its_row(self):
        settings = SHORT.model_copy(update={"blowup_limit": 0.01})
        quiet, loud = simulate_batch(
            [TransientJob(OscillatorCircuit(bias_voltage=0.0), 0), TransientJob(OscillatorCircuit(), 0)],
            settings=settings,
        )
        assert isinstance(quiet, TransientTrace)
        assert len(quiet) == 64
        assert isinstance(loud, StepUnstable)

    def test_trace_length_and_interval(self, board_traces):
        trace = board_traces["board1"]
        assert len(trace) == 2 ** 14
        assert trace.sample_interval == pytest.approx(1e-10)
        assert trace.bias_voltage == pytest.approx(0.2)

    def test_same_seed_is_bit_identical(self, board_traces):
        np.testing.assert_array_equal(board_traces["board1"].load_voltage, board_traces["board1_again"].load_voltage)

    def test_row_independent_of_batch(self, board_traces):
        alone = simulate_batch([TransientJob(get_preset("board1").with_bias(0.05), 0)])[0]
        np.testing.assert_allclose(alone.load_voltage, board_traces["board1_low"].load_voltage, rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize("name", ["board1", "board2"])
    def test_fundamental_near_startup_resonance(self, board_traces, name):
        frequency, _ = find_fundamental(compute_spectrum(board_traces[name]))
        assert frequency == pytest.approx(startup_check(get_preset(name)).resonant_frequency, rel=0.10)

    @pytest.mark.slow
    def test_halving_step_keeps_amplitude(self, board_traces):
        fine = SimulationSettings(max_frequency=3.2e9)
        assert fine.substeps == 2 * SimulationSettings().substeps
        halved = simulate_transient(get_preset("board1"), settings=fine)
        assert classify_regime(halved).steady_rms == pytest.approx(
            classify_regime(board_traces["board1"]).steady_rms, rel=0.005)

    def test_trace_validation(self):
        with pytest.raises(InvalidInput):
            TransientTrace(0.0, np.zeros(4), 0.0, 0)
        with pytest.raises(InvalidInput):
            TransientTrace(1e-10, np.array([0.0, np.nan]), 0.0, 0)

    def test_trace_csv(self, temp_dir):
        trace = TransientTrace(1e-10, np.array([0.0, 0.5, -0.25]), 0.2, 3)
        comment, header, rows = read_rows(write_trace_csv(trace, temp_dir / "trace.csv", "config_hash=x, seed=3"))
        assert comment == "config_hash=x, seed=3"
        assert header == ["time_s", "voltage_V"]
        assert [float(r[1]) for r in rows] == [0.0, 0.5, -0.25]


class TestRegime:
    def _sine(self, amplitude=0.1, frequency=500e6):
        t = np.arange(2 ** 14) * 1e-10
        return TransientTrace(1e-10, amplitude * np.sin(2 * np.pi * frequency * t), 0.2, 0)

    def test_silent_trace_is_quiescent(self):
        label = classify_regime(TransientTrace(1e-10, np.zeros(2 ** 14), 0.0, 0))
        assert label.label is Regime.QUIESCENT
        assert not label.starting

    def test_growing_trace_below_floor_is_starting(self):
        t = np.arange(2 ** 14) * 1e-10
        trace = TransientTrace(1e-10, 1e-9 * np.exp(t / 200e-9) * np.sin(2 * np.pi * 500e6 * t), 0.1, 0)
        label = classify_regime(trace)
        assert label.label is Regime.QUIESCENT
        assert label.growth > 1.5
        assert label.starting

    def test_sine_is_steady(self):
        label = classify_regime(self._sine())
        assert label.label is Regime.STEADY
        assert label.burst_cycles == 0
        assert label.mean == pytest.approx(2 / np.pi * 0.1, rel=0.05)
        assert label.steady_rms == pytest.approx(0.1 / np.sqrt(2), rel=0.01)

    def test_pulse_train_is_bursty(self):
        t = np.arange(2 ** 14) * 1e-10
        centres = 100e-9 + 200e-9 * np.arange(8)
        gate = np.sum(np.exp(-0.5 * ((t[:, None] - centres[None, :]) / 10e-9) ** 2), axis=1)
        trace = TransientTrace(1e-10, 0.1 * gate * np.sin(2 * np.pi * 500e6 * t), 0.2, 0)

        label = classify_regime(trace)

        assert label.label is Regime.BURSTY
        assert label.burst_cycles >= 3
        assert label.burst_rate == pytest.approx(label.burst_cycles / trace.duration)

    def test_envelope_tracks_amplitude(self):
        env = envelope(self._sine(amplitude=0.2), 25e6)
        assert env[-1000:].mean() == pytest.approx(2 / np.pi * 0.2, rel=0.05)

    def test_board1_oscillates_steadily(self, board_traces):
        assert classify_regime(board_traces["board1"]).label is Regime.STEADY

    def test_low_bias_is_quiescent(self, board_traces):
        assert classify_regime(board_traces["board1_low"]).label is Regime.QUIESCENT


@pytest.mark.slow
class TestOnsetAgreement:
    """Small-signal startup and the transient regime agree on a millivolt grid away from the NDR edges."""

    GRID = np.round(np.arange(0.0, 0.3005, 0.001), 6)

    @pytest.fixture(scope="class")
    def grid_traces(self):
        names = preset_names()
        jobs = [TransientJob(get_preset(n).with_bias(float(b)), 0) for n in names for b in self.GRID]
        traces = simulate_batch(jobs)
        rows = self.GRID.size
        return {n: traces[i * rows:(i + 1) * rows] for i, n in enumerate(names)}

    @pytest.mark.parametrize("name", preset_names())
    def test_startup_matches_regime(self, grid_traces, name):
        board = get_preset(name)
        edges = ndr_region(board.diode)
        checked = 0
        for bias, trace in zip(self.GRID, grid_traces[name]):
            if any(abs(bias - e) <= 0.010 for e in edges):
                continue
            predicted = startup_check(board.with_bias(float(bias))).oscillating
            observed = classify_regime(trace).starting
            assert predicted == observed, f"disagreement at {bias:.3f} V"
            checked += 1
        assert checked > 250


@pytest.mark.slow
class TestSquegging:
    """Board1 behind a large choke pulses instead of oscillating steadily."""

    @pytest.fixture(scope="class")
    def trace(self):
        return simulate_transient(get_preset("board1_squegging"))

    def test_variant_is_not_a_board(self):
        assert "board1_squegging" not in preset_names()
        assert "board1_squegging" in preset_names(variants=True)

    def test_bursty_regime(self, trace):
        label = classify_regime(trace)
        assert label.label is Regime.BURSTY
        assert label.burst_cycles >= 3

    def test_spectrum_has_no_dominant_line(self, trace):
        spectrum = compute_spectrum(trace)
        power = spectrum.power[~spectrum.dc_mask]
        top = int(np.argmax(power))
        peaks, _ = find_peaks(power)
        others = [power[i] for i in peaks if abs(i - top) > 2]
        assert others
        assert power[top] - max(others) < 20.0
