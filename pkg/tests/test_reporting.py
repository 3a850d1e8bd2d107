import io

import pandas as pd
import pytest

from app.models import Deviation, SweepRow
from app.reporting import FAILED, format_deviation, format_plan, plan_frame, sweep_csv, sweep_frame


class TestPlanViews:

    def test_frame_columns(self, case_plans):
        _, plan = case_plans["case_i"]
        frame = plan_frame(plan)
        assert list(frame["branch"]) == ["b1", "b2", "b3"]
        assert frame["Q"].sum() == pytest.approx(sum(l.total_q for l in plan.losses))

    def test_footer(self, case_plans):
        _, plan = case_plans["case_iib"]
        assert format_plan(plan).splitlines()[-1].startswith("V_load = 70 V, total cost = ")


class TestSweepViews:

    def test_sorted_with_failed_cells(self):
        rows = [
            SweepRow(v_load=52.0, cost=3.0, currents=(1.0, 2.0)),
            SweepRow(v_load=50.0, error="infeasible"),
        ]
        frame = sweep_frame(rows, 2)
        assert list(frame.columns) == ["v_load", "cost", "i_1", "i_2"]
        assert list(frame["v_load"]) == [50.0, 52.0]
        assert frame.iloc[0]["cost"] == FAILED
        assert frame.iloc[0]["i_2"] == FAILED

    def test_csv_parses_back(self):
        rows = [SweepRow(v_load=50.0 + k, cost=float(k), currents=(0.5 * k,)) for k in range(3)]
        frame = pd.read_csv(io.StringIO(sweep_csv(rows, 1)))
        assert list(frame["cost"]) == [0.0, 1.0, 2.0]


class TestDeviation:

    def test_names_branch(self):
        text = format_deviation(Deviation(max_relative=4.8e-4, branch=1, field="i_s"), ("b1", "b2"))
        assert "b2" in text and "i_s" in text

    def test_load_row(self):
        text = format_deviation(Deviation(max_relative=0.0, branch=None, field="v_load"), ("b1",))
        assert "load" in text
