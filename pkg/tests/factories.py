"""Builders for synthetic networks and the reference columns."""
import numpy as np

from app.models import Branch, BranchState, NetworkSpec, OperatingPoint, PwlCurve
from app.netmodel import pwl_eval

# Reference optimizer columns: (Is, V', V'', I) per branch.
REFERENCE = {
    "case_i": {
        "v_load": 50.0,
        "i_s": (6.9648, 5.5893, 5.5357),
        "v_in": (33.6996, 30.7549, 21.0780),
        "v_out": (50.8974, 50.8216, 50.5120),
        "i_out": (4.4870, 3.2864, 2.2264),
    },
    "case_iib": {
        "v_load": 70.0,
        "i_s": (8.8644, 7.2370, 8.6130),
        "v_in": (45.5677, 42.1051, 36.1241),
        "v_out": (71.1108, 71.0471, 70.9792),
        "i_out": (5.5540, 4.1885, 4.2574),
    },
    "case_iii": {
        "v_load": 70.0,
        "i_s": (9.1187, 6.7501, 8.7935),
        "v_in": (40.4407, 47.3, 38.0429),
        "v_out": (71.0097, 71.096, 71.0505),
        "i_out": (5.0485, 4.3842, 4.5674),
    },
}


def reference_point(case: str, net: NetworkSpec) -> OperatingPoint:
    """Reference columns as an OperatingPoint, with Vs on the source curve."""
    cols = REFERENCE[case]
    states = []
    for k, b in enumerate(net.branches):
        i_s = cols["i_s"][k]
        states.append(BranchState(
            vs=pwl_eval(b.curve, i_s),
            v_in=cols["v_in"][k],
            v_out=cols["v_out"][k],
            i_s=i_s,
            i_out=cols["i_out"][k],
        ))
    return OperatingPoint(branches=tuple(states), v_load=cols["v_load"])


def build_branch(name="b1", curve=None, **overrides) -> Branch:
    """A lossless branch unless parameters are overridden."""
    params = dict(rs=0.0, r_cable=0.0, r_l=0.0, r_m=0.0, r_d=0.0, v_d=0.0, alpha=0.0)
    params.update(overrides)
    return Branch(name=name, curve=curve or PwlCurve.constant(10.0), **params)


def build_network(branches, r_load=5.0, v_min=50.0, v_max=54.0, f_s=1e5) -> NetworkSpec:
    return NetworkSpec(branches=tuple(branches), r_load=r_load, v_load_min=v_min, v_load_max=v_max, f_s=f_s)


def random_branch(rng, name: str, pieces: int = 4) -> Branch:
    """Gate-passing branch: R_cable >= 0.1 always exceeds |R_M - R_D| <= 0.02."""
    v_oc = rng.uniform(30.0, 45.0)
    droop = rng.uniform(0.1, 0.5)
    bend = rng.uniform(0.0, 0.05)
    knots = np.linspace(0.0, 10.0, pieces)
    # tangents of v_oc - droop*I - bend*I^2
    curve = PwlCurve.from_pairs((-(droop + 2 * bend * x), v_oc + bend * x * x) for x in knots)
    return Branch(
        name=name,
        curve=curve,
        rs=rng.uniform(0.1, 0.5),
        r_cable=rng.uniform(0.1, 0.3),
        r_l=rng.uniform(0.02, 0.06),
        r_m=rng.uniform(0.01, 0.03),
        r_d=rng.uniform(0.01, 0.03),
        v_d=rng.uniform(0.3, 0.7),
        alpha=rng.uniform(0.001, 0.005),
        lam=rng.uniform(1.0, 2.0),
        mu=rng.uniform(0.0, 1.0),
    )


def random_network(rng, n_branches: int = 2, pieces: int = 4, v_span: float = 4.0) -> NetworkSpec:
    branches = [random_branch(rng, f"b{k + 1}", pieces) for k in range(n_branches)]
    return build_network(branches, r_load=10.0, v_min=50.0, v_max=50.0 + v_span)

