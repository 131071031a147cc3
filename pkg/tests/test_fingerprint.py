"""
Unit tests for fingerprint enrollment, identification and tamper checks.
"""

import json

import numpy as np
import pytest

from tdh.errors import DuplicateId, EmptyDatabase, GridMismatch, SchemaError, TooFewSweeps
from tdh.fingerprint import (
    Fingerprint,
    FingerprintDB,
    FingerprintOptions,
    EnrollmentStats,
    enroll,
    identify,
    match_score,
    median_template,
    tamper_check,
    tamper_delta,
)
from tdh.presets import get_preset, preset_names
from tdh.signature import SweepConfig, SweepRequest, sweep_batch

from test_signature import synthetic_map

BOARD_A = [[(700e6, -12), (1400e6, -30)], [(710e6, -11), (1420e6, -29)], [(720e6, -10)]]
BOARD_B = [[(400e6, -9), (800e6, -25)], [(405e6, -9)], [(410e6, -8), (820e6, -24)]]


def jittered(peaks, shift_db, board_id):
    """Same lines with a small per-line power change, as a re-seeded sweep would give."""
    return synthetic_map([[(f, p + shift_db * (k + 1)) for k, (f, p) in enumerate(row)] for row in peaks],
                         board_id=board_id)


@pytest.fixture
def db():
    database = FingerprintDB()
    enroll(database, "A", [jittered(BOARD_A, s, "A") for s in (0.0, 0.3, -0.4)])
    enroll(database, "B", [jittered(BOARD_B, s, "B") for s in (0.0, 0.2, -0.3)])
    return database


class TestMatchScore:
    def test_self_score_is_one(self):
        m = synthetic_map(BOARD_A)
        assert match_score(m, m) == pytest.approx(1.0)

    def test_symmetric(self):
        a, b = synthetic_map(BOARD_A), jittered(BOARD_A, 1.0, "A")
        assert match_score(a, b) == pytest.approx(match_score(b, a))

    def test_disjoint_lines_score_zero(self):
        assert match_score(synthetic_map(BOARD_A), synthetic_map(BOARD_B)) == pytest.approx(0.0)

    def test_against_silent_map(self):
        silent = synthetic_map([[], [], []])
        assert match_score(synthetic_map(BOARD_A), silent) <= 0.05
        assert match_score(silent, silent) == 1.0

    def test_score_in_unit_interval(self):
        score = match_score(synthetic_map(BOARD_A), jittered(BOARD_A, 2.0, "A"))
        assert 0.0 <= score <= 1.0

    def test_frequency_span_mismatch(self):
        other = synthetic_map(BOARD_A, freqs=np.arange(500e6, 3000e6, 10e6))
        with pytest.raises(GridMismatch):
            match_score(synthetic_map(BOARD_A), other)

    def test_resampled_grid(self):
        fine = np.arange(10e6, 2995e6, 5e6)
        a = synthetic_map([[(700e6, -12)]])
        b = synthetic_map([[(700e6, -12)]], freqs=fine)
        assert match_score(a, b) == pytest.approx(1.0)


class TestEnrollment:
    def test_stats(self, db):
        fp = db.get("A")
        assert fp.stats.pairs == 3
        assert 0.9 < fp.stats.mean <= 1.0
        assert fp.threshold(db.options) >= db.options.min_threshold

    def test_median_template(self):
        maps = [jittered(BOARD_A, s, "A") for s in (0.0, 1.0, -1.0)]
        template = median_template("A", maps)
        np.testing.assert_allclose(template.power_matrix, synthetic_map(BOARD_A).power_matrix)

    def test_too_few_sweeps(self):
        with pytest.raises(TooFewSweeps):
            enroll(FingerprintDB(), "A", [synthetic_map(BOARD_A)] * 2)

    def test_duplicate_id(self, db):
        with pytest.raises(DuplicateId):
            enroll(db, "A", [jittered(BOARD_A, s, "A") for s in (0.0, 0.1, 0.2)])

    def test_grids_must_agree(self):
        odd = synthetic_map(BOARD_A, freqs=np.arange(10e6, 2995e6, 5e6))
        with pytest.raises(GridMismatch):
            enroll(FingerprintDB(), "A", [synthetic_map(BOARD_A), synthetic_map(BOARD_A), odd])

    def test_threshold_floor(self):
        fp = Fingerprint("x", synthetic_map(BOARD_A), EnrollmentStats(0.99, 0.0, 3))
        opts = FingerprintOptions()
        assert fp.threshold(opts) == pytest.approx(0.99 - 3 * 0.01)
        loose = Fingerprint("y", synthetic_map(BOARD_A), EnrollmentStats(0.7, 0.2, 3))
        assert loose.threshold(opts) == opts.min_threshold


class TestIdentify:
    def test_known_board(self, db):
        report = identify(db, jittered(BOARD_A, 0.5, "query"))
        assert report.decision == "A"
        assert report.label == "Known(A)"
        assert [b for b, _ in report.ranked_scores] == ["A", "B"]

    def test_unknown_board(self, db):
        stranger = synthetic_map([[(1200e6, -12)], [(1210e6, -12)], [(1220e6, -12)]])
        report = identify(db, stranger, query_id="stranger")
        assert not report.is_known
        assert report.label == "Unknown"
        assert report.to_dict()["decision"] == "Unknown"
        assert report.query_id == "stranger"

    def test_empty_database(self):
        with pytest.raises(EmptyDatabase):
            identify(FingerprintDB(), synthetic_map(BOARD_A))

    def test_offset_keeps_ranking(self, db):
        query = jittered(BOARD_A, 0.5, "q")
        raised = synthetic_map([[(f, p + 0.5 * (k + 1) + 5.0) for k, (f, p) in enumerate(row)] for row in BOARD_A])
        first = identify(db, query)
        second = identify(db, raised)
        assert [b for b, _ in first.ranked_scores] == [b for b, _ in second.ranked_scores]


class TestTamper:
    def test_unchanged_board(self, db):
        report = tamper_check(db.get("A"), jittered(BOARD_A, 0.2, "A"), db.options)
        assert not report.flagged
        assert report.delta < report.limit

    def test_modified_board(self, db):
        shifted = synthetic_map([[(f * 0.9, p) for f, p in row] for row in BOARD_A])
        report = tamper_check(db.get("A"), shifted, db.options)
        assert report.flagged
        assert tamper_delta(db.get("A"), shifted) == pytest.approx(report.delta)


class TestDatabaseFile:
    def test_save_and_load(self, db, temp_dir):
        path = db.save(temp_dir / "db.json")
        loaded = FingerprintDB.load(path)
        assert loaded.ids() == ["A", "B"]
        assert "A" in loaded and len(loaded) == 2
        assert loaded.get("A").template == db.get("A").template
        assert loaded.get("A").stats == db.get("A").stats

    def test_provenance_saved_and_loaded(self, db, temp_dir):
        db.provenance = {"config_hash": "f00d", "seed": 42}
        path = db.save(temp_dir / "db.json")
        assert json.loads(path.read_text())["seed"] == 42
        assert FingerprintDB.load(path).provenance == {"config_hash": "f00d", "seed": 42}

    def test_bad_seed_is_schema_error(self, db, temp_dir):
        path = db.save(temp_dir / "db.json")
        data = json.loads(path.read_text())
        data["seed"] = "many"
        path.write_text(json.dumps(data))
        with pytest.raises(SchemaError) as exc:
            FingerprintDB.load(path)
        assert exc.value.field_path == "seed"

    def test_bad_template_path(self, db, temp_dir):
        path = db.save(temp_dir / "db.json")
        data = json.loads(path.read_text())
        data["fingerprints"][1]["template"]["power_matrix"] = [[0.0]]
        path.write_text(json.dumps(data))
        with pytest.raises(SchemaError) as exc:
            FingerprintDB.load(path)
        assert exc.value.field_path.startswith("fingerprints.1.template.power_matrix")

    def test_missing_stats(self, db, temp_dir):
        path = db.save(temp_dir / "db.json")
        data = json.loads(path.read_text())
        del data["fingerprints"][0]["stats"]
        path.write_text(json.dumps(data))
        with pytest.raises(SchemaError) as exc:
            FingerprintDB.load(path)
        assert exc.value.field_path == "fingerprints.0"


FP_SWEEP = SweepConfig(bias_start=0.14, bias_stop=0.26, bias_step=0.02)
ENROLL_SEEDS = (11, 12, 13)
QUERY_SEEDS = tuple(range(100, 120))
STRANGERS = 20


def stranger(i: int):
    """A preset with its lead and DC-block parts 20-39% larger."""
    base = get_preset(preset_names()[i % len(preset_names())])
    scale = 1.20 + 0.01 * i
    return base.updated(lead_inductance=base.lead_inductance * scale,
                        dc_block_capacitance=base.dc_block_capacitance * scale)


@pytest.mark.slow
class TestSimulatedBoards:
    """Five presets, three enrollment sweeps each, identified from twenty fresh seeds."""

    @pytest.fixture(scope="class")
    def sweeps(self):
        board1 = get_preset("board1")
        tampered = board1.updated(diode={"junction_capacitance": board1.diode.junction_capacitance * 1.1})
        requests = []
        for name in preset_names():
            for seed in ENROLL_SEEDS + QUERY_SEEDS:
                requests.append(SweepRequest(get_preset(name), FP_SWEEP.model_copy(update={"seed": seed}), name))
        for i in range(STRANGERS):
            requests.append(SweepRequest(stranger(i), FP_SWEEP.model_copy(update={"seed": 300 + i}), f"stranger{i}"))
        requests.append(SweepRequest(tampered, FP_SWEEP.model_copy(update={"seed": 400}), "board1"))
        maps = sweep_batch(requests)

        per_board = len(ENROLL_SEEDS) + len(QUERY_SEEDS)
        out = {}
        for i, name in enumerate(preset_names()):
            chunk = maps[i * per_board:(i + 1) * per_board]
            out[name] = (chunk[:len(ENROLL_SEEDS)], chunk[len(ENROLL_SEEDS):])
        offset = per_board * len(preset_names())
        out["strangers"] = maps[offset:offset + STRANGERS]
        out["tampered"] = maps[-1]
        return out

    @pytest.fixture(scope="class")
    def sim_db(self, sweeps):
        database = FingerprintDB()
        for name in preset_names():
            enroll(database, name, sweeps[name][0])
        return database

    def test_closed_set_accuracy(self, sweeps, sim_db):
        for name in preset_names():
            assert len(sweeps[name][1]) == 20
            for query in sweeps[name][1]:
                assert identify(sim_db, query).decision == name

    def test_perturbed_boards_are_unknown(self, sweeps, sim_db):
        assert len(sweeps["strangers"]) == STRANGERS
        for query in sweeps["strangers"]:
            assert not identify(sim_db, query).is_known, query.board_id

    def test_larger_junction_capacitance_is_tampered(self, sweeps, sim_db):
        fp = sim_db.get("board1")
        report = tamper_check(fp, sweeps["tampered"], sim_db.options)
        assert report.flagged
        assert report.delta > 3 * fp.stats.deviation

    def test_different_preset_is_tampered(self, sweeps, sim_db):
        report = tamper_check(sim_db.get("board1"), sweeps["board4"][1][0], sim_db.options)
        assert report.flagged
        assert report.delta > 0.5
