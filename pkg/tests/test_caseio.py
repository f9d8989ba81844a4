"""Case-file and disturbance-script parsing."""

import pytest

from cartswing.caseio import (make_lossless, parse_case, parse_disturbances,
                              serialize_case)
from cartswing.errors import CaseParseError, CaseValidationError


def test_ieee9_machine_data(ieee9_case):
    """The three machine records carry the study inertia values."""
    assert [g.m for g in ieee9_case.generators] == [2.364, 0.640, 0.301]
    assert [g.d for g in ieee9_case.generators] == [0.0254, 0.0066, 0.0026]
    assert [g.b for g in ieee9_case.generators] == [-16.45, -8.35, -5.52]
    assert [g.e for g in ieee9_case.generators] == [1.057, 1.050, 1.017]
    assert ieee9_case.com_threshold == 0.129


def test_zero_branches_rejected():
    text = """
case-format 1
base-mva 100.0
[buses]
a slack 0 0 1.0
[branches]
[generators]
a 1.0 0.01 0.0 -8.0 1.0 0.1
[loads]
"""
    with pytest.raises(CaseValidationError, match="no branches"):
        parse_case(text, "<t>")


def test_roundtrip_identity(ieee9_case):
    assert parse_case(serialize_case(ieee9_case), "<rt>") == ieee9_case


def test_malformed_field_has_line_locus():
    text = """case-format 1
base-mva 100.0
[buses]
a slack zero 0 1.0
"""
    with pytest.raises(CaseParseError) as err:
        parse_case(text, "case.txt")
    assert "case.txt" in str(err.value)
    assert err.value.line == 4


def test_dangling_branch_endpoint():
    text = """
case-format 1
base-mva 100.0
[buses]
a slack 0 0 1.0
b pq 0 0 1.0
[branches]
a zz 0.0 -5.0 0.0 1
[generators]
a 1.0 0.0 0.0 -8.0 1.0 0.1
"""
    with pytest.raises(CaseValidationError, match="zz"):
        parse_case(text, "<t>")


def test_negative_inertia_rejected():
    text = """
case-format 1
base-mva 100.0
[buses]
a slack 0 0 1.0
b pq 0 0 1.0
[branches]
a b 0.0 -5.0 0.0 1
[generators]
a -1.0 0.0 0.0 -8.0 1.0 0.1
"""
    with pytest.raises(CaseValidationError, match="M must be > 0"):
        parse_case(text, "<t>")


def test_make_lossless_maps_through_impedance(ieee9_case):
    lossless = make_lossless(ieee9_case)
    for orig, out in zip(ieee9_case.branches, lossless.branches):
        assert out.g == 0.0
        x = (1.0 / complex(orig.g, orig.b)).imag
        assert out.b == pytest.approx(-1.0 / x, rel=1e-12)
        assert out.bsh == orig.bsh


def test_disturbance_script_parses_and_orders():
    text = """
dist-format 1
1.1 line-open from=7 to=8
1.0 fault bus=7 b=-1e4
1.1 clear-fault bus=7
2.0 load-scale bus=8 factor=0.5
"""
    events = parse_disturbances(text, "<d>")
    assert [d.kind for d in events] == ["fault", "line-open", "clear-fault",
                                        "load-scale"]
    assert events[0].fault_y == complex(0.0, -1e4)
    assert events[-1].factor == 0.5


def test_disturbance_bad_factor():
    with pytest.raises(CaseParseError, match="factor"):
        parse_disturbances("dist-format 1\n1.0 load-scale bus=8 factor=-0.1", "<d>")


def test_disturbance_unknown_kind():
    with pytest.raises(CaseParseError, match="unknown disturbance"):
        parse_disturbances("dist-format 1\n1.0 explode bus=8", "<d>")
