from datetime import datetime, timedelta

import pytest
from hypothesis import given, strategies as st

from herdtwin.core import (
    N_STATES, POSITIVE_CONTROL, STATES, TREATMENTS, Breed, CohortKey, CombinedTreatment, HourlySeries,
    Procedure, Relief, Sex, StateLabel, format_treatment, hour_serial, parse_treatment,
)
from herdtwin.errors import IllegalTreatment, TimestampBeforeEpoch, UnknownTreatmentCode

DAY1 = datetime(2019, 8, 10)


class TestVocabulary:
    def test_eight_distinct_states(self):
        assert N_STATES == 8
        assert len({s.value for s in STATES}) == 8
        assert StateLabel.Eating in STATES

    def test_breeds_and_sexes(self):
        assert len(Breed) == 5
        assert len(Sex) == 2

    @pytest.mark.parametrize("text, expected", [("REST", StateLabel.Resting), ("resting", StateLabel.Resting),
                                                ("walk", StateLabel.Walking), ("HighActivity", StateLabel.HighActivity)])
    def test_state_parse(self, text, expected):
        assert StateLabel.parse(text) is expected

    def test_state_parse_rejects_unknown(self):
        with pytest.raises(ValueError):
            StateLabel.parse("SLEEP")


class TestTreatments:
    def test_thirteen_legal_combinations(self):
        legal = []
        for p in Procedure:
            for r in Relief:
                try:
                    legal.append(CombinedTreatment(p, r))
                except IllegalTreatment:
                    pass
        assert len(legal) == 13
        assert set(legal) == set(TREATMENTS)

    @pytest.mark.parametrize("p, r", [(Procedure.None_, Relief.Meloxicam), (Procedure.Castrating, Relief.PositiveControl),
                                      (Procedure.None_, Relief.NegativeControl)])
    def test_illegal_combinations_rejected(self, p, r):
        with pytest.raises(IllegalTreatment):
            CombinedTreatment(p, r)

    def test_parse_examples(self):
        assert parse_treatment("C,T+M") == CombinedTreatment(Procedure.Castrating, Relief.TopicalPlusMeloxicam)
        assert parse_treatment("P") == CombinedTreatment(Procedure.None_, Relief.PositiveControl)
        with pytest.raises(UnknownTreatmentCode):
            parse_treatment("X,Y")

    @pytest.mark.parametrize("code", ["(D+C,N)", " d + c , n ", "(d+c, N)"])
    def test_parse_tolerates_case_whitespace_parentheses(self, code):
        assert parse_treatment(code) == CombinedTreatment(Procedure.DehorningAndCastrating, Relief.NegativeControl)

    def test_format_parse_round_trip(self):
        for t in TREATMENTS:
            assert parse_treatment(format_treatment(t)) == t
        assert len({format_treatment(t) for t in TREATMENTS}) == 13

    def test_positive_control_is_last_row(self):
        assert POSITIVE_CONTROL.is_positive_control
        assert sorted(TREATMENTS) == list(TREATMENTS)


class TestCohortKey:
    def test_ordering_breed_then_sex_then_treatment(self):
        a = CohortKey(Breed.Angus, Sex.Male, POSITIVE_CONTROL)
        b = CohortKey(Breed.Brahman, Sex.Female, TREATMENTS[0])
        c = CohortKey(Breed.Brahman, Sex.Female, TREATMENTS[1])
        d = CohortKey(Breed.Brahman, Sex.Male, TREATMENTS[0])
        assert sorted([d, c, b, a]) == [a, b, c, d]

    def test_json_round_trip(self):
        k = CohortKey(Breed.Brangus, Sex.Male, parse_treatment("D,T+M"))
        assert CohortKey.from_json(k.to_json()) == k


class TestHourSerial:
    @pytest.mark.parametrize("ts, expected", [
        (DAY1 + timedelta(minutes=30), 1),
        (DAY1 + timedelta(days=1), 25),
        (DAY1 + timedelta(hours=23, minutes=59), 24),
    ])
    def test_examples(self, ts, expected):
        assert hour_serial(ts, DAY1) == expected

    def test_before_epoch(self):
        with pytest.raises(TimestampBeforeEpoch):
            hour_serial(DAY1 - timedelta(minutes=1), DAY1)

    def test_epoch_truncated_to_hour(self):
        assert hour_serial(DAY1 + timedelta(hours=8, minutes=1), DAY1 + timedelta(hours=8, minutes=6)) == 1

    @given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
    def test_monotone_and_counts_hour_boundaries(self, a, b):
        ta, tb = DAY1 + timedelta(minutes=a), DAY1 + timedelta(minutes=b)
        sa, sb = hour_serial(ta, DAY1), hour_serial(tb, DAY1)
        if a <= b:
            assert sa <= sb
        assert sb - sa == b // 60 - a // 60


class TestHourlySeries:
    def test_hour_of_day_follows_start_offset(self):
        s = HourlySeries(None, StateLabel.Resting, [1, 2, 17, 18], [0, 1, 2, 3], start_hour=8)
        assert s.hour_of_day.tolist() == [8, 9, 0, 1]

    @pytest.mark.parametrize("serials, minutes", [([2, 1], [0, 0]), ([0], [1]), ([1], [61]), ([1], [-1])])
    def test_invariants_enforced(self, serials, minutes):
        with pytest.raises(ValueError):
            HourlySeries(None, StateLabel.Resting, serials, minutes)

    def test_arrays_are_read_only(self):
        s = HourlySeries(None, StateLabel.Resting, [1, 2], [3.0, 4.0])
        with pytest.raises(ValueError):
            s.minutes[0] = 1.0

    def test_gap_detection(self):
        assert HourlySeries(None, StateLabel.Resting, [1, 2, 3], [0, 0, 0]).is_gap_free
        assert not HourlySeries(None, StateLabel.Resting, [1, 3], [0, 0]).is_gap_free
