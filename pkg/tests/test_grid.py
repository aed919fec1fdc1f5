from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from powersec.grid import (EMBEDDED_CASES, NO_OUTAGE, Bus, CaseFormatError, Outage, format_case,
                           is_connected, load_case, parse_case, validate)

TWO_BUS = """\
NAME tiny
BASE_MVA 100
BUS
1 slack 0 0 0
2 pq 50 0 0
BRANCH
1 2 0 0.1 0 100
GEN
1 0 -999 999 1.0
"""


def test_ieee118_counts(ieee118):
    assert (len(ieee118.buses), len(ieee118.generators), len(ieee118.branches)) == (118, 54, 186)


def test_two_bus_counts():
    case = parse_case(TWO_BUS)
    assert len(case.buses) == 2 and len(case.branches) == 1 and len(case.generators) == 1
    assert case.name == "tiny"
    assert case.buses[1].v_min == 0.95 and case.buses[1].v_max == 1.05


def test_dangling_reference_reports_line():
    text = TWO_BUS.replace("1 2 0 0.1 0 100", "1 999 0 0.1 0 100")
    with pytest.raises(CaseFormatError, match="999") as exc:
        parse_case(text)
    assert exc.value.line == 7


def test_syntax_error_has_line_number():
    with pytest.raises(CaseFormatError) as exc:
        parse_case(TWO_BUS.replace("2 pq 50 0 0", "2 pq fifty 0 0"))
    assert exc.value.line == 5


def test_duplicate_bus_and_zero_reactance():
    with pytest.raises(CaseFormatError, match="duplicate"):
        parse_case(TWO_BUS.replace("2 pq 50 0 0", "1 pq 50 0 0"))
    with pytest.raises(CaseFormatError, match="reactance"):
        parse_case(TWO_BUS.replace("0 0.1 0 100", "0 0 0 100"))


def test_validate_examples():
    case = parse_case(TWO_BUS)
    assert len(validate(case)) == 0 and validate(case)
    two_slack = replace(case, buses=(case.buses[0], replace(case.buses[1], kind="slack")))
    assert len(validate(two_slack)) == 1
    flat_band = replace(case, buses=(case.buses[0], replace(case.buses[1], v_min=1.0, v_max=1.0)))
    assert len(validate(flat_band)) == 1


@pytest.mark.parametrize("name", EMBEDDED_CASES)
def test_embedded_cases_validate_and_round_trip(name):
    case = load_case(name)
    assert not validate(case).violations
    again = parse_case(format_case(case), name=case.name)
    assert again == case


@given(v_min=st.floats(0.5, 0.99), width=st.floats(0.001, 0.5), load=st.floats(-500, 500),
       x=st.floats(0.001, 2.0), b=st.floats(-1, 1))
@settings(max_examples=50, deadline=None)
def test_round_trip_property(v_min, width, load, x, b):
    case = parse_case(TWO_BUS)
    bus = Bus(2, "pq", load, load / 3, b, v_min, v_min + width)
    case = replace(case, buses=(case.buses[0], bus),
                   branches=(replace(case.branches[0], x=x),))
    assert parse_case(format_case(case), name=case.name) == case


def test_outage_labels():
    assert Outage.from_label("line:5") == Outage("line", 5)
    assert Outage.from_label(NO_OUTAGE.label()) == NO_OUTAGE
    with pytest.raises(ValueError):
        Outage("bus", 1)


def test_connectivity(ieee118, two_bus):
    assert is_connected(ieee118)
    assert not is_connected(two_bus, removed_branch=0)
