"""File-format tests: observation CSV round-trips and validation, cohort
JSON, synthetic cohort generation, and reproducibility manifests."""
import numpy as np
import pytest

from incentive_design.boxes import Boxes
from incentive_design.config import DEFAULT_CONFIG, boxes_from_config
from incentive_design.estimation import ObservationSet
from incentive_design.io import (
    ARCHETYPES,
    OBS_HEADER,
    ObservationFileError,
    file_digest,
    generate_synthetic_cohort,
    load_cohort,
    load_observations,
    save_cohort,
    save_observations,
    verify_manifest,
    write_manifest,
)

BOXES = Boxes()


def _obs(seed=0, weeks=3):
    rng = np.random.default_rng(seed)
    weights = np.round(rng.uniform(150.0, 250.0, size=(weeks, 7)), 4)
    weights[rng.random(weights.shape) < 0.3] = np.nan
    return ObservationSet(
        weights=weights,
        g=rng.integers(0, 2, size=weeks),
        r_w=rng.choice([0.0, 10.0, 30.0], size=weeks),
        r_c=rng.choice([0.0, 5.0, 15.0], size=weeks),
    )


class TestObservationRoundTrip:
    def test_load_save_load(self, tmp_path):
        obs_map = {"alice": _obs(0), "bob": _obs(1, weeks=5)}
        p = tmp_path / "obs.csv"
        save_observations(p, obs_map)
        loaded = load_observations(p, BOXES)
        assert set(loaded) == {"alice", "bob"}
        for pid in obs_map:
            np.testing.assert_array_equal(loaded[pid].weights,
                                          obs_map[pid].weights)
            np.testing.assert_array_equal(loaded[pid].g, obs_map[pid].g)
            np.testing.assert_array_equal(loaded[pid].r_w, obs_map[pid].r_w)
            np.testing.assert_array_equal(loaded[pid].r_c, obs_map[pid].r_c)

    def test_save_load_save_bytes_identical(self, tmp_path):
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        save_observations(p1, {"x": _obs(2)})
        save_observations(p2, load_observations(p1, BOXES))
        assert p1.read_bytes() == p2.read_bytes()


def _write(tmp_path, lines):
    p = tmp_path / "obs.csv"
    p.write_text("\n".join([",".join(OBS_HEADER)] + lines) + "\n")
    return p


class TestObservationValidation:
    def test_bad_header(self, tmp_path):
        p = tmp_path / "obs.csv"
        p.write_text("pid,week,day\n")
        with pytest.raises(ObservationFileError, match="header"):
            load_observations(p, BOXES)

    def test_week_day_ranges(self, tmp_path):
        p = _write(tmp_path, ["a,24,0,200,,,", "a,0,7,200,,,"])
        with pytest.raises(ObservationFileError) as exc:
            load_observations(p, BOXES)
        assert any("week 24" in e for e in exc.value.errors)
        assert any("day 7" in e for e in exc.value.errors)

    def test_reward_outside_box_rejected(self, tmp_path):
        p = _write(tmp_path, ["a,0,6,200,1,31,0"])
        with pytest.raises(ObservationFileError, match="reward outside"):
            load_observations(p, BOXES)

    def test_goal_on_interior_day_rejected(self, tmp_path):
        p = _write(tmp_path, ["a,0,3,200,1,0,0", "a,0,6,200,1,0,0"])
        with pytest.raises(ObservationFileError, match="day-6"):
            load_observations(p, BOXES)

    def test_missing_day6_row(self, tmp_path):
        p = _write(tmp_path, ["a,0,0,200,,,", "a,0,6,199,1,0,0",
                              "a,1,0,198,,,"])
        with pytest.raises(ObservationFileError, match="no day-6 row"):
            load_observations(p, BOXES)

    def test_errors_carry_line_numbers(self, tmp_path):
        p = _write(tmp_path, ["a,0,0,200,,,", "a,zero,0,200,,,"])
        with pytest.raises(ObservationFileError) as exc:
            load_observations(p, BOXES)
        assert exc.value.errors[0].startswith("line 3:")

    def test_missing_weight_becomes_nan(self, tmp_path):
        p = _write(tmp_path, ["a,0,0,,,,", "a,0,6,199,0,10,5"])
        obs = load_observations(p, BOXES)["a"]
        assert np.isnan(obs.weights[0, 0])
        assert obs.weights[0, 6] == 199.0
        assert obs.r_w[0] == 10.0 and obs.r_c[0] == 5.0

    def test_empty_file_with_header(self, tmp_path):
        p = _write(tmp_path, [])
        assert load_observations(p, BOXES) == {}


class TestCohortFiles:
    def test_round_trip(self, tmp_path):
        boxes = boxes_from_config(DEFAULT_CONFIG)
        cohort = generate_synthetic_cohort(
            6, 3, DEFAULT_CONFIG["cohort"], DEFAULT_CONFIG["traits"], boxes)
        p = tmp_path / "cohort.json"
        save_cohort(p, cohort)
        loaded = load_cohort(p)
        assert loaded.participants == cohort.participants


class TestSyntheticCohort:
    def _gen(self, n=47, seed=0):
        boxes = boxes_from_config(DEFAULT_CONFIG)
        return generate_synthetic_cohort(
            n, seed, DEFAULT_CONFIG["cohort"], DEFAULT_CONFIG["traits"],
            boxes)

    def test_size_ids_and_boxes(self):
        boxes = boxes_from_config(DEFAULT_CONFIG)
        cohort = self._gen()
        assert len(cohort.participants) == 47
        assert cohort.participants[0].pid == "p00"
        cohort.validate(boxes)
        assert all(m.archetype in ARCHETYPES for m in cohort.participants)

    def test_deterministic(self):
        assert self._gen(seed=5).participants == self._gen(seed=5).participants
        assert self._gen(seed=5).participants != self._gen(seed=6).participants

    def test_archetype_proportions(self):
        cohort = self._gen(n=3000, seed=1)
        counts = {a: 0 for a in ARCHETYPES}
        for m in cohort.participants:
            counts[m.archetype] += 1
        assert counts["initial_achiever"] / 3000 == pytest.approx(0.10, abs=0.02)
        assert counts["constant_achiever"] / 3000 == pytest.approx(0.73, abs=0.03)
        assert counts["intervention_resistant"] / 3000 == pytest.approx(0.05, abs=0.02)

    def test_invalid_inputs(self):
        boxes = boxes_from_config(DEFAULT_CONFIG)
        with pytest.raises(ValueError):
            generate_synthetic_cohort(0, 0, DEFAULT_CONFIG["cohort"],
                                      DEFAULT_CONFIG["traits"], boxes)
        bad = dict(DEFAULT_CONFIG["cohort"])
        bad["p_initial_achiever"] = 0.9
        bad["p_constant_achiever"] = 0.9
        with pytest.raises(ValueError):
            generate_synthetic_cohort(5, 0, bad, DEFAULT_CONFIG["traits"],
                                      boxes)


class TestManifest:
    def test_write_and_verify(self, tmp_path):
        f = tmp_path / "out.txt"
        f.write_text("hello\n")
        write_manifest(tmp_path, master_seed=7, cfg_hash="abc", files=[f])
        assert verify_manifest(tmp_path)
        f.write_text("tampered\n")
        assert not verify_manifest(tmp_path)

    def test_digest_stable(self, tmp_path):
        f = tmp_path / "x"
        f.write_bytes(b"data")
        assert file_digest(f) == file_digest(f)
