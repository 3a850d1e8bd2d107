"""Shared fixtures: the shipped case networks and small synthetic networks."""
from pathlib import Path

import numpy as np
import pytest

from app.core import DispatchEngine
from app.ingestion import load_network

from .factories import REFERENCE, build_branch, build_network

CASES = Path(__file__).resolve().parent.parent / "data" / "cases"


@pytest.fixture(scope="session")
def case_paths():
    return {name: CASES / f"{name}.json" for name in REFERENCE}


@pytest.fixture(scope="session")
def case_i(case_paths):
    return load_network(case_paths["case_i"])[0]


@pytest.fixture(scope="session")
def case_iib(case_paths):
    return load_network(case_paths["case_iib"])[0]


@pytest.fixture(scope="session")
def case_iii(case_paths):
    return load_network(case_paths["case_iii"])[0]


@pytest.fixture(scope="session")
def case_plans(case_i, case_iib, case_iii):
    """Each shipped case solved once at its minimum load voltage."""
    nets = {"case_i": case_i, "case_iib": case_iib, "case_iii": case_iii}
    return {
        name: (net, DispatchEngine(net, enforce_vin_floor=True).solve())
        for name, net in nets.items()
    }


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ideal_single():
    """One lossless 10 V source, load 4 ohm; V_load settles at 10*g."""
    return build_network([build_branch()], r_load=4.0, v_min=20.0, v_max=24.0)
