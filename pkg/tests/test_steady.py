"""Power flow, disturbances and the post-disturbance state."""

import numpy as np
import pytest

from cartswing.caseio import Disturbance, parse_case
from cartswing.errors import CaseValidationError, PowerFlowError
from cartswing.steady import (MachineState, apply_disturbance, disturbed_grid,
                              machine_angles, post_disturbance_state,
                              solve_power_flow, speed_coupling_matrix)
from cartswing.network import partition_admittance
from cartswing.swing import to_loss_frame

# independently published solution of the standard 9-bus case
PUBLISHED_VMAG = {"1": 1.040, "2": 1.025, "3": 1.025, "4": 1.0258,
                  "5": 0.9956, "6": 1.0127, "7": 1.0258, "8": 1.0159,
                  "9": 1.0324}


def test_9bus_matches_published_solution(ieee9_case):
    pf = solve_power_flow(ieee9_case)
    assert pf.max_mismatch <= 1e-8
    for bus, vm in PUBLISHED_VMAG.items():
        assert abs(pf.voltage(bus)) == pytest.approx(vm, abs=1e-3)
    # slack output and internal angles agree with the published dispatch
    assert pf.gen_s[0].real == pytest.approx(0.716, abs=2e-3)


def test_no_load_flat_profile():
    text = """
case-format 1
base-mva 100.0
[buses]
a slack 0 0 1.0
b pq 0 0 1.0
[branches]
a b 0.0 -5.0 0.0 1
[generators]
a 1.0 0.01 0.0 -8.0 1.0 0.0
"""
    pf = solve_power_flow(parse_case(text, "<t>"))
    assert np.allclose(np.abs(pf.v), 1.0, atol=1e-12)
    assert np.allclose(np.angle(pf.v), 0.0, atol=1e-12)


def test_infeasible_demand_diverges():
    text = """
case-format 1
base-mva 100.0
[buses]
a slack 0 0 1.0
b pq 0 0 1.0
[branches]
a b 0.0 -2.0 0.0 1
[generators]
a 1.0 0.01 0.0 -8.0 1.0 5.0
[loads]
b power p=5.0 q=2.0
"""
    with pytest.raises(PowerFlowError):
        solve_power_flow(parse_case(text, "<t>"))


def test_machine_angles_fixed_e_matches_closed_form(smib_case, smib):
    pf, model, part, vmap, op = smib
    e, delta = machine_angles(smib_case, pf, model, mode="fixed-e")
    mach = model.machines[0]
    v_t = pf.voltage("g")
    expected = np.angle(v_t) + mach.gamma + np.arcsin(
        pf.gen_s[0].real / (mach.y_mag * mach.e_set * abs(v_t)))
    assert e[0] == mach.e_set
    assert delta[0] == pytest.approx(expected, abs=1e-12)


def test_apply_load_scale(grid9):
    _, model, _, _, _ = grid9
    scaled = apply_disturbance(model, Disturbance("load-scale", 1.0, bus="8",
                                                  factor=0.9))
    orig = dict((b, y) for b, _, y in model.load_set.constant_ci)
    new = dict((b, y) for b, _, y in scaled.load_set.constant_ci)
    assert new["8"] == pytest.approx(0.9 * orig["8"])
    assert new["5"] == orig["5"]


def test_apply_fault_dominates_diagonal_and_collapses_voltage(grid9):
    _, model, _, _, op = grid9
    m2, p2, v2 = disturbed_grid(model, [Disturbance("fault", 1.0, bus="7",
                                                    fault_y=-1e4j)])
    n7 = m2.km_index("7") - m2.nk
    assert abs(p2.y_mm[n7, n7]) > 0.99e4
    init = post_disturbance_state(op, m2, v2)
    assert abs(init.v_m[m2.mbuses.index("7")]) < 5e-3


def test_apply_line_open_keeps_symmetry(grid9):
    _, model, _, _, _ = grid9
    m2 = apply_disturbance(model, Disturbance("line-open", 1.1,
                                              from_bus="7", to_bus="8"))
    assert len(m2.branches) == len(model.branches) - 1
    p2 = partition_admittance(m2)
    km = p2.km_block()
    assert np.allclose(km, km.T)


def test_apply_disturbance_validation(grid9):
    _, model, _, _, _ = grid9
    with pytest.raises(CaseValidationError):
        apply_disturbance(model, Disturbance("fault", 1.0, bus="99",
                                             fault_y=-1e4j))
    with pytest.raises(CaseValidationError):
        apply_disturbance(model, Disturbance("line-open", 1.0,
                                             from_bus="1", to_bus="9"))
    with pytest.raises(CaseValidationError):
        apply_disturbance(model, Disturbance("load-scale", 1.0, bus="4",
                                             factor=0.5))


def test_null_disturbance_is_fixed_point(grid9):
    _, model, part, vmap, op = grid9
    init = post_disturbance_state(op, model, vmap)
    assert np.array_equal(init.delta, op.delta)
    assert np.array_equal(init.omega, op.omega)
    assert np.allclose(init.dw(), 0.0)
    assert np.allclose(np.abs(init.v_k - op.v_k), 0.0, atol=1e-12)


def test_load_loss_moves_voltages_not_rotors(grid9):
    _, model, _, _, op = grid9
    m2, p2, v2 = disturbed_grid(model, [Disturbance("load-scale", 1.0,
                                                    bus="8", factor=0.9)])
    init = post_disturbance_state(op, m2, v2)
    assert np.array_equal(init.delta, op.delta)      # continuity, bit-exact
    assert np.array_equal(init.omega, op.omega)
    assert np.max(np.abs(init.v_k - op.v_k)) > 1e-4  # voltages did jump


def test_fault_isolates_generator_2(grid9):
    """With the terminal network shorted the machine's power output dies."""
    _, model, _, _, op = grid9
    m2, p2, v2 = disturbed_grid(model, [Disturbance("fault", 1.0, bus="7",
                                                    fault_y=-1e4j)])
    init = post_disturbance_state(op, m2, v2)
    from cartswing.steady import electrical_power
    p, q = electrical_power(m2, init.e, init.delta, init.v_k)
    assert abs(p[1]) < 0.02  # gen at bus 2 feeds only the short


def test_dw_identity_vs_finite_difference(grid9):
    """dw/dt at the switch equals the finite difference of w(E, delta(t))."""
    _, model, _, vmap, op = grid9
    state = MachineState(delta=op.delta.copy(),
                         omega=np.array([0.3, -0.2, 0.15]),
                         e=op.e.copy(), pmech=op.pmech.copy(),
                         wtilde=np.zeros(0))
    init = post_disturbance_state(state, model, vmap)
    gam = np.array([m.gamma for m in model.machines])
    h = 1e-6
    xp, yp = to_loss_frame(state.e, state.delta + h * state.omega, gam)
    xm, ym = to_loss_frame(state.e, state.delta - h * state.omega, gam)
    fd = (np.concatenate([xp, yp]) - np.concatenate([xm, ym])) / (2 * h)
    assert np.max(np.abs(fd - init.dw())) <= 1e-9


def test_speed_coupling_matrix_shape():
    j = speed_coupling_matrix(np.array([1.0, 2.0]))
    w = np.array([1.0, 0.5, 0.2, -0.3])
    expected = np.array([1.0 * 0.2, 2.0 * -0.3, -1.0 * 1.0, -2.0 * 0.5])
    assert np.allclose(j @ w, expected)
