"""Shared fixtures: the 9-bus study pipeline and small synthetic grids."""

import os

import numpy as np
import pytest

from cartswing.caseio import parse_case, make_lossless
from cartswing.network import (build_network_model, categorize_loads,
                               partition_admittance, reduce_to_sensitivities)
from cartswing.steady import operating_point, solve_power_flow

CASE_DIR = os.path.join(os.path.dirname(__file__), "..", "cases")
IEEE9_PATH = os.path.abspath(os.path.join(CASE_DIR, "ieee9.case"))
SCENARIO_DIR = os.path.abspath(os.path.join(CASE_DIR, "scenarios"))


def scenario_path(name):
    return os.path.join(SCENARIO_DIR, name)


@pytest.fixture(scope="session")
def ieee9_case():
    with open(IEEE9_PATH) as fh:
        return parse_case(fh.read(), IEEE9_PATH)


@pytest.fixture(scope="session")
def ieee9_lossless(ieee9_case):
    return make_lossless(ieee9_case)


def build_pipeline(case):
    pf = solve_power_flow(case)
    v_op = {b.id: pf.voltage(b.id) for b in case.buses}
    loads = categorize_loads(case, v_op)
    model = build_network_model(case, loads)
    part = partition_admittance(model)
    vmap = reduce_to_sensitivities(part, model)
    op = operating_point(case, pf, model, vmap)
    return pf, model, part, vmap, op


@pytest.fixture(scope="session")
def grid9(ieee9_lossless):
    """Lossless 9-bus pipeline used by the study scenarios."""
    return build_pipeline(ieee9_lossless)


@pytest.fixture(scope="session")
def grid9_lossy(ieee9_case):
    return build_pipeline(ieee9_case)


SMIB_CASE = """
case-format 1
base-mva 100.0
[buses]
g  slack  0.0  0.0  1.02
l  pq     0.0  0.0  1.0
[branches]
g l 0.0 -8.0 0.0 1
[generators]
g  1.5  0.05  0.0  -10.0  1.05  0.6
[loads]
l impedance p=0.6 q=0.2
"""


@pytest.fixture(scope="session")
def smib_case():
    return parse_case(SMIB_CASE, "<smib>")


@pytest.fixture(scope="session")
def smib(smib_case):
    return build_pipeline(smib_case)


FIG2_CASE = """
# modified 3-bus layout: three machines on two terminal buses, one plain bus
case-format 1
base-mva 100.0
[buses]
a  slack  0.0  0.0  1.02
b  pv     0.0  0.0  1.01
c  pq     0.0  0.0  1.0
[branches]
a b 0.0 -12.0 0.0 1
a c 0.0 -10.0 0.0 1
b c 0.0 -10.0 0.0 1
[generators]
a  2.0  0.02  0.0  -9.0   1.04  0.4
a  1.0  0.01  0.0  -11.0  1.03  0.3
b  0.8  0.01  0.0  -8.0   1.03  0.5
[loads]
c impedance p=1.1 q=0.4
"""


@pytest.fixture(scope="session")
def fig2_case():
    return parse_case(FIG2_CASE, "<fig2>")


def random_small_case(rng):
    """Random valid 3-bus, 2-machine case for property suites (N = 8)."""
    b1 = -rng.uniform(6.0, 14.0)
    b2 = -rng.uniform(5.0, 12.0)
    lines = [
        ("a", "b", rng.uniform(0.0, 0.6), -rng.uniform(5.0, 12.0)),
        ("b", "c", rng.uniform(0.0, 0.6), -rng.uniform(5.0, 12.0)),
        ("a", "c", rng.uniform(0.0, 0.6), -rng.uniform(5.0, 12.0)),
    ]
    p1 = rng.uniform(0.2, 0.8)
    pl = rng.uniform(0.5, 1.2)
    ql = rng.uniform(0.1, 0.4)
    lines_txt = "\n".join(f"{f} {t} {g!r} {b!r} 0.0 1" for f, t, g, b in lines)
    text = f"""
case-format 1
base-mva 100.0
[buses]
a  slack  0.0  0.0  1.03
b  pv     0.0  0.0  1.01
c  pq     0.0  0.0  1.0
[branches]
{lines_txt}
[generators]
a  {rng.uniform(0.8, 3.0)!r}  {rng.uniform(0.01, 0.08)!r}  0.0  {b1!r}  1.04  {p1!r}
b  {rng.uniform(0.3, 1.5)!r}  {rng.uniform(0.005, 0.05)!r}  0.0  {b2!r}  1.02  {rng.uniform(0.2, 0.7)!r}
[loads]
c impedance p={pl!r} q={ql!r}
"""
    return parse_case(text, "<random>")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
