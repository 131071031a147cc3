"""
Unit tests for spectral analysis.
"""

import numpy as np
import pytest

from tdh.circuit_sim import TransientTrace, board_dc_power
from tdh.errors import InsufficientPoints, InvalidInput, NoSignal, TraceTooShort, ZeroDCPower
from tdh.io import read_rows
from tdh.link_budget import fspl_db
from tdh.presets import CHAMBER_SETUP, MEASURED_EFFICIENCY, MEASURED_FUNDAMENTALS, get_preset
from tdh.spectral import (
    Spectrum,
    Window,
    apply_gain_mask,
    compute_spectrum,
    crop_and_decimate,
    dc_rf_efficiency,
    extract_harmonics,
    find_fundamental,
    interpolated_fundamental,
    peak_efficiency,
    rbw_smooth,
    refine_peak,
    tunable_range,
    write_spectrum_csv,
)

from conftest import tone_trace


def _power_at(spectrum, frequency):
    return float(spectrum.power[np.argmin(np.abs(spectrum.frequency_bins - frequency))])


class TestComputeSpectrum:
    @pytest.mark.parametrize("window", list(Window))
    def test_single_tone_power(self, window):
        spectrum = compute_spectrum(tone_trace((100e6, 0.1)), window=window)
        assert spectrum.bin_width == pytest.approx(1e6)
        assert _power_at(spectrum, 100e6) == pytest.approx(-10.0, abs=0.1)

    def test_parseval(self):
        trace = tone_trace((100e6, 0.1), noise=0.001, seed=4)
        spectrum = compute_spectrum(trace, span=None)
        steady = trace.steady_state()
        expected = float(np.var(steady)) / 50.0
        assert spectrum.total_power() == pytest.approx(expected, rel=0.01)

    def test_two_tones_hann_leakage(self):
        spectrum = compute_spectrum(tone_trace((100e6, 0.1), (300e6, 0.01)), window=Window.HANN)
        assert _power_at(spectrum, 100e6) == pytest.approx(-10.0, abs=0.1)
        assert _power_at(spectrum, 300e6) == pytest.approx(-30.0, abs=0.1)
        far = np.ones(len(spectrum), dtype=bool)
        for f in (100e6, 300e6):
            far &= np.abs(spectrum.frequency_bins - f) > 2.5e6
        assert spectrum.power[far & ~spectrum.dc_mask].max() < -150

    def test_dc_bin_holds_mean(self):
        trace = TransientTrace(tone_trace().sample_interval, np.full(2 ** 14, 0.1), 0.0, 0)
        spectrum = compute_spectrum(trace, span=None)
        assert spectrum.frequency_bins[0] == 0.0
        assert spectrum.dc_mask[0]
        assert spectrum.power[0] == pytest.approx(10 * np.log10(0.01 / 50 / 1e-3))

    def test_span_crop(self):
        spectrum = compute_spectrum(tone_trace((100e6, 0.1)), span=(50e6, 500e6))
        assert spectrum.frequency_bins[0] >= 50e6
        assert spectrum.frequency_bins[-1] <= 500e6

    def test_short_trace(self):
        with pytest.raises(TraceTooShort):
            compute_spectrum(TransientTrace(1e-10, np.zeros(1000), 0.0, 0))

    def test_spectrum_validation(self):
        with pytest.raises(InvalidInput):
            Spectrum(np.array([1.0, 2.0]), np.array([0.0]), 1.0, (0.0, 2.0))


class TestSmoothingAndDecimation:
    def test_rbw_below_bin_is_noop(self):
        spectrum = compute_spectrum(tone_trace((100e6, 0.1)))
        assert rbw_smooth(spectrum, 0.5e6) is spectrum

    def test_rbw_spreads_tone(self):
        spectrum = compute_spectrum(tone_trace((100e6, 0.1)), window=Window.HANN)
        smoothed = rbw_smooth(spectrum, 5e6)
        # Hann puts 1.5x the tone power into three bins, spread over five
        assert _power_at(smoothed, 100e6) == pytest.approx(-10.0 + 10 * np.log10(0.3), abs=0.05)
        assert smoothed.resolution_bandwidth >= 5e6

    def test_rbw_must_be_positive(self):
        with pytest.raises(InvalidInput):
            rbw_smooth(compute_spectrum(tone_trace((100e6, 0.1))), 0.0)

    def test_decimation_keeps_peak(self):
        spectrum = compute_spectrum(tone_trace((100e6, 0.1)), span=None)
        small = crop_and_decimate(spectrum, max_points=100)
        assert len(small) <= 100
        assert small.power.max() == pytest.approx(-10.0, abs=0.1)
        assert np.all(np.diff(small.frequency_bins) > 0)

    def test_decimation_noop_when_small(self):
        spectrum = compute_spectrum(tone_trace((100e6, 0.1)))
        assert crop_and_decimate(spectrum, max_points=10001) is spectrum


class TestHarmonics:
    def test_fundamental(self):
        f, p = find_fundamental(compute_spectrum(tone_trace((100e6, 0.1), (200e6, 0.03))))
        assert f == pytest.approx(100e6)
        assert p == pytest.approx(-10.0, abs=0.1)

    def test_refine_peak_parabola(self):
        spectrum = Spectrum(100e6 + 1e6 * np.arange(5), np.array([-80.0, -10.0, -4.0, -6.0, -80.0]), 1e6, (100e6, 104e6))
        assert refine_peak(spectrum, 2) == pytest.approx(102.25e6)
        assert refine_peak(spectrum, 0) == pytest.approx(100e6)
        assert refine_peak(spectrum, 4) == pytest.approx(104e6)

    def test_interpolated_fundamental_between_bins(self):
        spectrum = compute_spectrum(tone_trace((100.3e6, 0.1)))
        coarse, _ = find_fundamental(spectrum)
        fine, _ = interpolated_fundamental(spectrum)
        assert coarse == pytest.approx(100e6)
        assert fine == pytest.approx(100.3e6, abs=0.05e6)

    def test_silent_trace_has_no_signal(self):
        with pytest.raises(NoSignal):
            find_fundamental(compute_spectrum(tone_trace()))

    def test_extract_orders(self):
        spectrum = compute_spectrum(tone_trace((100e6, 0.1), (200e6, 0.03), (300e6, 0.01)))
        found = extract_harmonics(spectrum, 100e6)
        assert found.orders == [2, 3]
        assert [h.frequency for h in found.harmonics] == pytest.approx([200e6, 300e6])
        assert found.harmonics[1].power == pytest.approx(-30.0, abs=0.1)
        records = found.to_records()
        assert records[0]["order"] == 1 and records[0]["frequency_Hz"] == pytest.approx(100e6)

    def test_fundamental_must_be_positive(self):
        with pytest.raises(InvalidInput):
            extract_harmonics(compute_spectrum(tone_trace((100e6, 0.1))), 0.0)


class TestEfficiency:
    @pytest.mark.parametrize("board", sorted(MEASURED_EFFICIENCY))
    def test_reproduces_measured_table(self, board):
        percent, dc, _ = MEASURED_EFFICIENCY[board]
        peak = percent / 100 * dc
        assert 100 * dc_rf_efficiency(peak, dc) == pytest.approx(percent, rel=5e-5)

    def test_zero_dc_power(self):
        with pytest.raises(ZeroDCPower):
            dc_rf_efficiency(1e-4, 0.0)

    def test_peak_efficiency(self):
        assert peak_efficiency([(0.1, 0.05), (0.2, 0.3), (0.25, 0.2)]) == (0.2, 0.3)
        with pytest.raises(InsufficientPoints):
            peak_efficiency([])

    def test_tunable_range(self):
        assert tunable_range([(0.1, 700e6), (0.2, 730e6), (0.3, 690e6)]) == pytest.approx(40e6)
        with pytest.raises(InsufficientPoints):
            tunable_range([(0.1, 700e6)])


class TestWirelessView:
    def test_gain_mask_offsets_bins(self):
        spectrum = compute_spectrum(tone_trace((1000e6, 0.1)), span=None)
        wireless = apply_gain_mask(spectrum, CHAMBER_SETUP)
        expected = 2 * 7.0 - fspl_db(1e9, 1.63) - 3.68 - 2.24
        assert _power_at(wireless, 1e9) - _power_at(spectrum, 1e9) == pytest.approx(expected, abs=1e-9)
        assert wireless.power[0] == spectrum.power[0]

    def test_csv(self, temp_dir):
        spectrum = compute_spectrum(tone_trace((100e6, 0.1)), span=(50e6, 60e6))
        comment, header, rows = read_rows(write_spectrum_csv(spectrum, temp_dir / "s.csv", "config_hash=h, seed=1"))
        assert header == ["frequency_Hz", "power_dBm"]
        assert comment == "config_hash=h, seed=1"
        assert len(rows) == len(spectrum)


class TestSimulatedBoards:
    def test_board1_fundamental_near_measured(self, board_traces):
        spectrum = compute_spectrum(board_traces["board1"])
        f, p = find_fundamental(spectrum)
        target_f, target_p = MEASURED_FUNDAMENTALS["board1"]
        assert f == pytest.approx(target_f, rel=0.15)
        assert abs(p - target_p) <= 6.0

    def test_harmonics_sit_on_multiples(self, board_traces):
        spectrum = compute_spectrum(board_traces["board1"])
        f0, _ = find_fundamental(spectrum)
        for h in extract_harmonics(spectrum, f0).harmonics:
            assert abs(h.frequency - h.order * f0) <= 0.02 * h.order * f0

    def test_board2_only_second_order_in_span(self, board_traces):
        spectrum = compute_spectrum(board_traces["board2"])
        f0, _ = find_fundamental(spectrum)
        assert f0 >= 1e9
        assert set(extract_harmonics(spectrum, f0).orders) <= {2}

    def test_board1_efficiency_is_plausible(self, board_traces):
        _, p = find_fundamental(compute_spectrum(board_traces["board1"]))
        eta = dc_rf_efficiency(1e-3 * 10 ** (p / 10), board_dc_power(get_preset("board1")))
        assert 0 < eta < 1
