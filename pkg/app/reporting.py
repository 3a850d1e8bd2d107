"""Tabular views of plans, sweeps and deviation reports."""
from typing import Sequence

import pandas as pd

from .models import Deviation, DispatchPlan, SweepRow

FAILED = "FAILED"


def plan_frame(plan: DispatchPlan) -> pd.DataFrame:
    p = plan.point
    return pd.DataFrame({
        "branch": list(plan.names),
        "Is": p.column("i_s"),
        "Vin": p.column("v_in"),
        "Vout": p.column("v_out"),
        "I": p.column("i_out"),
        "gain": plan.gains,
        "g_max": plan.g_max,
        "duty": plan.duties,
        "Q": [l.total_q for l in plan.losses],
        "switching": [l.switching for l in plan.losses],
        "Ic": plan.circulating,
        "power_slack": [t.power_slack for t in plan.tightness],
    })


def format_plan(plan: DispatchPlan) -> str:
    table = plan_frame(plan).to_string(index=False, float_format=lambda v: f"{v:.6g}")
    footer = f"V_load = {plan.point.v_load:.6g} V, total cost = {plan.total_cost:.6g}"
    return f"{table}\n{footer}\n"


def plan_csv(plan: DispatchPlan) -> str:
    frame = plan_frame(plan)
    frame.insert(1, "v_load", plan.point.v_load)
    return frame.to_csv(index=False, float_format="%.17g")


def sweep_frame(rows: Sequence[SweepRow], n_branches: int) -> pd.DataFrame:
    records = []
    for row in rows:
        record = {"v_load": row.v_load, "cost": FAILED if row.cost is None else row.cost}
        currents = row.currents or (FAILED,) * n_branches
        record.update({f"i_{k + 1}": c for k, c in enumerate(currents)})
        records.append(record)
    columns = ["v_load", "cost"] + [f"i_{k + 1}" for k in range(n_branches)]
    return pd.DataFrame.from_records(records, columns=columns).sort_values("v_load", kind="stable")


def sweep_csv(rows: Sequence[SweepRow], n_branches: int) -> str:
    return sweep_frame(rows, n_branches).to_csv(index=False, float_format="%.10g")


def deviation_frame(dev: Deviation, names: Sequence[str]) -> pd.DataFrame:
    where = "load" if dev.branch is None else names[dev.branch]
    return pd.DataFrame([{"field": dev.field, "branch": where, "max_relative": dev.max_relative}])


def format_deviation(dev: Deviation, names: Sequence[str]) -> str:
    return deviation_frame(dev, names).to_string(index=False, float_format=lambda v: f"{v:.6g}") + "\n"
