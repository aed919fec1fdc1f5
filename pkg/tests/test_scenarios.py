import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from powersec.grid import NO_OUTAGE
from powersec.powerflow import solve
from powersec.scenarios import (ScenarioConfig, ScenarioError, generate_states, ramp_schedule,
                                removable_elements, sample_contingencies, write_state_csv)


@pytest.mark.parametrize("start,end,step,expected", [
    (1.0, 1.2, 0.1, [1.0, 1.1, 1.2]),
    (1.0, 1.0, 0.1, [1.0]),
    (1.0, 1.25, 0.1, [1.0, 1.1, 1.2, 1.25]),
])
def test_ramp_examples(start, end, step, expected):
    got = ramp_schedule(ScenarioConfig(start, end, step))
    assert got == pytest.approx(expected, abs=1e-12)


@given(start=st.floats(0.5, 2), span=st.floats(0, 1), step=st.floats(0.005, 0.5))
@settings(max_examples=100, deadline=None)
def test_ramp_is_arithmetic(start, span, step):
    s = ramp_schedule(ScenarioConfig(start, start + span, step))
    assert s[0] == pytest.approx(start) and s[-1] == pytest.approx(start + span)
    d = np.diff(s)
    assert np.all(d > 0) and np.all(d <= step + 1e-9)
    assert np.allclose(d[:-1], step)


@pytest.mark.parametrize("kw", [dict(scale_start=2, scale_end=1), dict(scale_step=0),
                                dict(contingencies_per_step=0)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        ScenarioConfig(**kw)


def test_two_bus_single_line_islands(two_bus):
    # removing the only line islands the load bus
    assert sample_contingencies(two_bus, 1, 0) == []


def test_contingency_determinism(ieee118):
    a = sample_contingencies(ieee118, 10, 7)
    assert a == sample_contingencies(ieee118, 10, 7)
    assert a != sample_contingencies(ieee118, 10, 8)
    assert len(set(a)) == 10


def test_contingency_population(ieee118):
    with pytest.raises(ValueError):
        sample_contingencies(ieee118, len(removable_elements(ieee118)) + 1, 0)
    slack = ieee118.slack_index
    for o in removable_elements(ieee118):
        if o.kind == "generator":
            assert ieee118.bus_index(ieee118.generators[o.element_id].bus) != slack


def test_two_bus_counting(two_bus):
    recs = generate_states(two_bus, ScenarioConfig(1.0, 1.0, 0.1, 1))
    # one base record; the only outage islands and is skipped
    assert len(recs) == 1 and recs[0].state.outage == NO_OUTAGE


def test_three_bus_counting_and_prefault(three_bus):
    cfg = ScenarioConfig(1.0, 1.2, 0.1, 2, master_seed=3)
    recs = generate_states(three_bus, cfg)
    assert len(recs) == 3 * 3
    assert [r.scenario_id for r in recs] == list(range(len(recs)))
    for r in recs:
        assert r.prefault_state.converged
        assert r.prefault_state.load_scale == r.state.load_scale
        assert r.prefault_state.outage == NO_OUTAGE


def test_workers_invariance(three_bus, tmp_path):
    cfg = ScenarioConfig(1.0, 1.3, 0.1, 2, master_seed=11)
    a = generate_states(three_bus, cfg, workers=1)
    b = generate_states(three_bus, cfg, workers=2)
    write_state_csv(a, three_bus, tmp_path / "a.csv")
    write_state_csv(b, three_bus, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_first_step_divergence_is_fatal(three_bus):
    with pytest.raises(ScenarioError):
        generate_states(three_bus, ScenarioConfig(50.0, 50.0, 0.1, 1))


@pytest.mark.parametrize("name", ["two_bus", "three_bus", "ieee118"])
def test_min_voltage_monotone(name, request):
    case = request.getfixturevalue(name)
    vmins = []
    for s in ramp_schedule(ScenarioConfig(1.0, 1.5, 0.1)):
        state = solve(case, s)
        assert state.converged
        vmins.append(state.v_mag.min())
    assert np.all(np.diff(vmins) <= 1e-9)


def test_diverged_records_keep_precollapse_state(ieee118):
    cfg = ScenarioConfig(2.0, 2.0, 0.1, 40, master_seed=5)
    recs = generate_states(ieee118, cfg)
    dead = [r for r in recs if not r.state.converged]
    assert dead, "expected at least one collapsing outage at scale 2.0"
    for r in dead:
        assert r.precollapse_state is not None and r.precollapse_state.converged
        assert r.observed_state is r.precollapse_state
    alive = [r for r in recs if r.state.converged]
    assert all(r.observed_state is r.state for r in alive)
