import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from herdtwin.core import HourlySeries, StateLabel
from herdtwin.errors import InvalidConfig
from herdtwin.lstm import LstmConfig
from herdtwin.sweep import (
    COMPANIONS, STAT_NAMES, axis_values, cell_config, summarize, sweep, write_sweep_csv, write_trace_csvs,
)

SMALL = {"hidden_units": 3, "num_layers": 1, "batch_size": 2, "epochs": 4}


def day_series(days=10, seed=0):
    rng = np.random.default_rng(seed)
    y = 30 + 20 * np.sin(2 * np.pi * np.arange(24 * days) / 24) + rng.normal(0, 2, 24 * days)
    return HourlySeries(None, StateLabel.Resting, np.arange(1, 24 * days + 1), np.clip(y, 0, 60))


class TestGrid:
    def test_desk_epoch_cap(self):
        assert axis_values("epochs") == (100, 500, 1000, 2000)
        assert axis_values("epochs", full=True)[-1] == 20000

    def test_hidden_axis_has_seven_cells(self):
        assert axis_values("hidden_units") == (4, 8, 16, 32, 64, 128, 256)

    def test_unknown_axis(self):
        with pytest.raises(InvalidConfig):
            axis_values("dropout")

    def test_companions_then_overrides_then_axis(self):
        cfg = cell_config("num_layers", 3, LstmConfig(learning_rate=5e-3), {"epochs": 7, "num_layers": 9})
        assert (cfg.num_layers, cfg.hidden_units, cfg.batch_size, cfg.epochs) == (3, 16, 24, 7)
        assert cfg.learning_rate == 5e-3

    @pytest.mark.parametrize("axis", list(COMPANIONS))
    def test_companions_fix_the_other_axes(self, axis):
        cfg = cell_config(axis, 5)
        for k, v in COMPANIONS[axis].items():
            assert getattr(cfg, k) == v


class TestSummarize:
    @given(st.floats(0, 1e4))
    def test_single_value_collapses(self, v):
        assert set(summarize([v]).values()) == {v}

    def test_five_numbers(self):
        s = summarize([1.0, 2.0, 3.0, 4.0, 5.0])
        assert [s[k] for k in STAT_NAMES] == [1.0, 2.0, 3.0, 4.0, 5.0]

    def test_empty_is_nan(self):
        assert all(np.isnan(v) for v in summarize([]).values())


class TestSweep:
    def test_single_configuration(self):
        res = sweep(day_series(), "hidden_units", [3], repetitions=1, overrides=SMALL)
        assert len(res.cells) == 1 and res.ranked[0].rank == 1
        cell = res.cells[0]
        assert cell.error is None and len(cell.runs) == 1
        st_ = cell.test_stats
        assert st_["min"] == st_["q1"] == st_["median"] == st_["q3"] == st_["max"] == cell.runs[0].test_mse

    def test_repetitions_use_consecutive_seeds(self):
        res = sweep(day_series(), "hidden_units", [3], repetitions=3, base=LstmConfig(seed=10), overrides=SMALL)
        assert [r.seed for r in res.cells[0].runs] == [10, 11, 12]
        assert len({r.test_mse for r in res.cells[0].runs}) == 3

    def test_failing_cell_recorded(self):
        # ten days give nine training windows, so a batch of 48 cannot be formed
        overrides = dict(SMALL)
        del overrides["batch_size"]
        res = sweep(day_series(), "batch_size", [3, 48], repetitions=1, overrides=overrides)
        good, bad = res.cell(3), res.cell(48)
        assert good.error is None and good.rank == 1
        assert bad.error.startswith("InvalidConfig") and bad.rank is None and not bad.runs

    def test_identical_cells_trained_once(self):
        res = sweep(day_series(), "hidden_units", [3, 3], repetitions=1, overrides=SMALL)
        a, b = res.cells
        assert a.runs[0] is b.runs[0]

    def test_ranked_by_median_test_mse(self):
        res = sweep(day_series(), "hidden_units", [2, 3, 5], repetitions=2, overrides=SMALL)
        medians = [c.test_stats["median"] for c in res.ranked]
        assert medians == sorted(medians)
        assert [c.rank for c in res.ranked] == [1, 2, 3]

    def test_epoch_aggregation_pools_tail_samples(self):
        res = sweep(day_series(), "hidden_units", [3], repetitions=2, aggregation="epochs",
                    overrides={**SMALL, "epochs": 8})
        cell = res.cells[0]
        assert len(cell.samples("train")) == sum(len(r.epoch_train_mse) for r in cell.runs) == 4

    def test_parallel_matches_serial(self):
        kw = dict(repetitions=1, overrides=SMALL)
        a = sweep(day_series(), "hidden_units", [2, 3], **kw)
        b = sweep(day_series(), "hidden_units", [2, 3], jobs=2, **kw)
        assert [c.runs[0].test_mse for c in a.cells] == [c.runs[0].test_mse for c in b.cells]

    @pytest.mark.parametrize("kw", [dict(aggregation="median"), dict(repetitions=0), dict(values=[])])
    def test_invalid_arguments(self, kw):
        args = dict(values=[3])
        args.update(kw)
        with pytest.raises(InvalidConfig):
            sweep(day_series(), "hidden_units", **args)


class TestOutputs:
    def test_csv_rows(self, tmp_path):
        overrides = dict(SMALL)
        del overrides["batch_size"]
        res = sweep(day_series(), "batch_size", [2, 48], repetitions=1, overrides=overrides)
        with open(write_sweep_csv(res, tmp_path / "s.csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["value"] for r in rows] == ["2", "48"]
        assert rows[0]["error"] == "" and rows[0]["rank"] == "1"
        assert float(rows[0]["test_median"]) == res.cell(2).test_stats["median"]
        assert rows[1]["error"] and rows[1]["rank"] == ""

    def test_trace_files(self, tmp_path):
        res = sweep(day_series(), "hidden_units", [3], repetitions=2, overrides=SMALL)
        paths = write_trace_csvs(res, tmp_path / "tr")
        assert [p.name for p in paths] == ["trace_hidden_units_3_seed0.csv", "trace_hidden_units_3_seed1.csv"]
        lines = paths[0].read_text().splitlines()
        assert lines[0] == "epoch,train_mse" and len(lines) == 1 + 5
