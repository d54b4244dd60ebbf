from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, strategies as st

from herdtwin.aggregate import (
    DailyProfile, cohort_average, daily_profile, hourly_budget, read_profile_csv, read_series_csv, treatment_comparison,
    write_profile_csv, write_series_csv,
)
from herdtwin.core import (
    STATES, Breed, CohortKey, HourlySeries, Origin, Quality, SensorRecord, Sex, StateLabel, TREATMENTS,
    parse_treatment,
)
from herdtwin.errors import EmptyInput, EmptySeries, MixedState
from herdtwin.synth import HerdSpec, RosterEntry, generate, largest_remainder

from conftest import EPOCH

REST = StateLabel.Resting
KEY = CohortKey(Breed.Brahman, Sex.Female, parse_treatment("P"))


def _recs(spec):
    """spec: list of (minute offset, state or None, corrupted flag)."""
    return [SensorRecord("A", EPOCH + timedelta(minutes=m), s,
                         Quality.Corrupted if (c or s is None) else Quality.Valid) for m, s, c in spec]


def brute_force_budget(records, state):
    hours = {}
    for r in records:
        serial = 1 + int((r.timestamp - EPOCH) // timedelta(hours=1))
        slot = hours.setdefault(serial, [0, False])
        slot[1] |= r.quality is Quality.Corrupted
        if r.quality is Quality.Valid and r.state is state:
            slot[0] += 1
    return {k: v[0] for k, v in sorted(hours.items()) if not v[1]}


def random_fixture(rng, days=3):
    n = int(rng.integers(1, days * 1440))
    minutes = np.sort(rng.choice(days * 1440, size=n, replace=False))
    states = rng.integers(0, 8, size=n)
    bad = rng.random(n) < rng.choice([0.0, 0.0005, 0.01])
    return _recs([(int(m), STATES[s], bool(b)) for m, s, b in zip(minutes, states, bad)])


class TestHourlyBudget:
    def test_saturated_hour(self):
        s = hourly_budget(_recs([(6 * 60 + m, REST, False) for m in range(60)]), REST, epoch=EPOCH)
        assert s.points == [(7, 6, 60.0)]

    def test_one_corrupted_record_destroys_the_hour(self):
        spec = [(6 * 60 + m, REST, False) for m in range(59)] + [(6 * 60 + 59, REST, True)]
        spec += [(7 * 60, REST, False)]
        s = hourly_budget(_recs(spec), REST, epoch=EPOCH)
        assert s.serials.tolist() == [8]

    def test_random_fixtures_match_recount(self, rng):
        for _ in range(40):
            recs = random_fixture(rng)
            state = STATES[int(rng.integers(0, 8))]
            s = hourly_budget(recs, state, epoch=EPOCH)
            oracle = brute_force_budget(recs, state)
            assert s.serials.tolist() == list(oracle)
            assert s.minutes.tolist() == [float(v) for v in oracle.values()]

    def test_partial_hours_kept(self):
        s = hourly_budget(_recs([(8 * 60 + 6 + m, REST, False) for m in range(54)]), REST, epoch=EPOCH)
        assert s.points == [(9, 8, 54.0)]

    def test_states_sum_to_sixty_in_valid_hour(self, rng):
        states = rng.integers(0, 8, size=60)
        recs = _recs([(m, STATES[s], False) for m, s in enumerate(states)])
        total = sum(hourly_budget(recs, st_, epoch=EPOCH).minutes[0] for st_ in STATES)
        assert total == 60

    @given(st.integers(0, 2**32 - 1), st.integers(0, 3 * 1440 - 1))
    def test_adding_corruption_only_removes_hours(self, seed, extra):
        rng = np.random.default_rng(seed)
        recs = random_fixture(rng)
        before = hourly_budget(recs, REST, epoch=EPOCH)
        ts = EPOCH + timedelta(minutes=extra)
        recs2 = [r for r in recs if r.timestamp != ts] + [SensorRecord("A", ts, REST, Quality.Corrupted)]
        after = hourly_budget(sorted(recs2, key=lambda r: r.timestamp), REST, epoch=EPOCH)
        kept = dict(zip(before.serials.tolist(), before.minutes.tolist()))
        for serial, m in zip(after.serials.tolist(), after.minutes.tolist()):
            assert kept[serial] == m
        assert 1 + extra // 60 not in after.serials.tolist()


def _series(serials, minutes, aid="A"):
    return HourlySeries(KEY, REST, serials, minutes, Origin.single(aid))


class TestCohortAverage:
    def test_two_point_mean(self):
        out = cohort_average([_series([5], [30], "A"), _series([5], [50], "B")])
        assert out.points == [(5, 4, 40.0)]
        assert out.origin == Origin.cohort(2)

    def test_missing_serial_averages_over_present(self):
        out = cohort_average([_series([8, 9], [10, 20], "A"), _series([8], [30], "B")])
        assert out.minutes.tolist() == [20.0, 20.0]
        assert out.support.tolist() == [2, 1]

    def test_single_animal_identity(self):
        s = _series([1, 2, 5], [1.5, 2.5, 3.5])
        out = cohort_average([s])
        np.testing.assert_array_equal(out.serials, s.serials)
        np.testing.assert_array_equal(out.minutes, s.minutes)

    def test_empty_and_mixed(self):
        with pytest.raises(EmptyInput):
            cohort_average([])
        other = HourlySeries(KEY, StateLabel.Walking, [1], [1])
        with pytest.raises(MixedState):
            cohort_average([_series([1], [1]), other])

    @given(st.permutations(range(5)))
    def test_permutation_invariant(self, perm):
        rng = np.random.default_rng(7)
        series = []
        for i in range(5):
            serials = np.sort(rng.choice(50, size=20, replace=False)) + 1
            series.append(_series(serials, rng.uniform(0, 60, 20), f"A{i}"))
        a = cohort_average(series)
        b = cohort_average([series[i] for i in perm])
        assert a.minutes.tobytes() == b.minutes.tobytes()

    def test_profile_of_average_within_input_profiles(self, rng):
        series = [_series(np.arange(1, 73), rng.uniform(0, 60, 72), f"A{i}") for i in range(4)]
        avg = daily_profile(cohort_average(series)).values
        profiles = np.array([daily_profile(s).values for s in series])
        assert np.all(avg >= profiles.min(axis=0) - 1e-12)
        assert np.all(avg <= profiles.max(axis=0) + 1e-12)


class TestDailyProfile:
    def test_constant(self):
        p = daily_profile(_series(np.arange(1, 49), np.full(48, 42.0)))
        assert p.values.tolist() == [42.0] * 24
        assert p.support.tolist() == [2] * 24

    def test_noiseless_synthetic_equals_template(self):
        spec = HerdSpec([RosterEntry(KEY.breed, KEY.sex, KEY.treatment, 1)], days=52)
        ds = generate(spec)
        recs = next(iter(ds.animals.values()))
        template = spec.cohort_template(KEY)
        for state in (REST, StateLabel.Eating):
            p = daily_profile(hourly_budget(recs, state, epoch=EPOCH))
            np.testing.assert_array_equal(p.values, largest_remainder(template)[:, state.index])

    def test_structural_hole(self):
        serials = [s for s in range(1, 49) if (s - 1) % 24 != 3]
        p = daily_profile(_series(serials, np.ones(len(serials))))
        assert p.support[3] == 0 and np.isnan(p.values[3])
        assert np.all(p.support[np.arange(24) != 3] == 2)

    def test_empty(self):
        with pytest.raises(EmptySeries):
            daily_profile(_series([], []))


def _profile(code, values, state=REST):
    return DailyProfile(CohortKey(Breed.Brahman, Sex.Female, parse_treatment(code)), state,
                        np.asarray(values, float), np.ones(24, np.int64))


class TestTreatmentComparison:
    def test_negative_control_rests_longest(self):
        cmp_ = treatment_comparison([_profile("P", np.full(24, 30)), _profile("D,N", np.full(24, 35)),
                                     _profile("D,T", np.full(24, 32))])
        assert cmp_.treatments[0] == parse_treatment("D,N")

    def test_ties_follow_table_order(self):
        codes = ["P", "D,N", "C,T", "D+C,M"]
        cmp_ = treatment_comparison([_profile(c, np.full(24, 10)) for c in codes])
        assert list(cmp_.treatments) == sorted(parse_treatment(c) for c in codes)

    def test_totals_are_column_sums(self, rng):
        codes = ["C,N", "C,T", "C,M", "C,T+M", "P"]
        profiles = [_profile(c, rng.uniform(0, 60, 24)) for c in codes]
        cmp_ = treatment_comparison(profiles)
        for j, t in enumerate(cmp_.treatments):
            src = next(p for p in profiles if p.cohort.treatment == t)
            assert cmp_.totals[j] == pytest.approx(float(sum(src.values.tolist())), rel=1e-14)
            np.testing.assert_array_equal(cmp_.matrix[:, j], src.values)
        assert list(cmp_.totals) == sorted(cmp_.totals, reverse=True)

    def test_mixed_state(self):
        with pytest.raises(MixedState):
            treatment_comparison([_profile("P", np.ones(24)), _profile("D,N", np.ones(24), StateLabel.Walking)])


class TestCsvRoundTrip:
    def test_series(self, tmp_path):
        s = HourlySeries(KEY, REST, [3, 4, 9], [1.25, 0.1, 60.0], Origin.cohort(2), start_hour=0, support=[2, 1, 2])
        back = read_series_csv(write_series_csv(s, tmp_path / "s.csv"), REST)
        assert back.points == s.points
        assert back.support.tolist() == [2, 1, 2]

    def test_profile(self, tmp_path, rng):
        p = _profile("P", rng.uniform(0, 60, 24))
        values, support = read_profile_csv(write_profile_csv(p, tmp_path / "p.csv"))
        np.testing.assert_array_equal(values, p.values)
        np.testing.assert_array_equal(support, p.support)
