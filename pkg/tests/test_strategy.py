import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalfuzz.capabilities import Capability, capset
from causalfuzz.conditions import (TRUE, CTrue, exactly, member, not_member, parse_capability_condition,
                                   parse_sensor_condition)
from causalfuzz.errors import CapabilityDomainError, StrategyFormatError
from causalfuzz.miniswat import data_path
from causalfuzz.plant import Simulator, make_physical_state, observe, run_plant
from causalfuzz.strategy import (Refusal, Step, Strategy, Transition, bind_alpha, derive, dump_strategy,
                                 fire_step, load_strategy, loads_strategy, null_strategy, strategy_universe,
                                 sustained_strategy, universal_strategy, validate_strategy, verify_trace)

MV101_OPEN = Capability("MV101", "open")
GOAL_HIGH = parse_sensor_condition("LIT101 > 1100")


def bundled(name):
    return load_strategy(data_path(f"strategies/{name}.yaml"))


# -- condition examples --------------------------------------------------------

def test_sensor_condition_examples():
    g = parse_sensor_condition("LIT101 >= 250 and LIT101 <= 1100")
    assert g.evaluate({"LIT101": 500})
    assert TRUE.evaluate({})
    assert not parse_sensor_condition("LIT101 < 1000").evaluate({"LIT101": 1000})


def test_capability_condition_examples():
    assert parse_capability_condition("[P101,on] not in _").evaluate(capset(("MV101", "close")), {})
    assert parse_capability_condition("_ == {}").evaluate(frozenset(), {})
    phi = parse_capability_condition("[MV101,open] in _ and X == _", ["X"])
    Y = frozenset([MV101_OPEN])
    assert phi.evaluate(Y, {"X": Y})


def test_shorthand_normalizes_to_core_forms():
    universe = [frozenset(), capset(("p1", "on")), capset(("p2", "on")), capset(("p1", "on"), ("p2", "on"))]
    pairs = [("[p1,on] in _", "{[p1,on]} <= _"),
             ("[p1,on] not in _", "not {[p1,on]} <= _"),
             ("_ != X", "not _ == X"),
             ("{[p1,on]}", "_ == {[p1,on]}"),
             ("X not <= _", "not X <= _")]
    for short, core in pairs:
        a = parse_capability_condition(short, ["X"])
        b = parse_capability_condition(core, ["X"])
        for Y in universe:
            for X in universe:
                assert a.evaluate(Y, {"X": X}) == b.evaluate(Y, {"X": X}), short


# -- validation --------------------------------------------------------------------

@pytest.mark.parametrize("name", ["null", "sustained", "conditional", "universal", "deferred"])
def test_bundled_strategies_validate(model, name):
    assert validate_strategy(bundled(name), model) == []


def test_duplicate_edge_reported():
    T = Strategy(("a", "b"), (Transition("a", TRUE, CTrue(), "b"), Transition("a", TRUE, exactly(frozenset()), "b"),
                              Transition("b", TRUE, CTrue(), "b")), "a")
    out = validate_strategy(T)
    assert any("duplicate edge" in v and "'a' -> 'b'" in v for v in out)


def test_dead_state_reported():
    T = Strategy(("a", "b"), (Transition("a", TRUE, CTrue(), "b"),), "a")
    assert any(v.startswith("liveness") and "'b'" in v for v in validate_strategy(T))


def test_guarded_only_state_reported():
    g = parse_sensor_condition("LIT101 > 5")
    T = Strategy(("a",), (Transition("a", g, CTrue(), "a"),), "a")
    assert any("liveness" in v for v in validate_strategy(T))


def test_model_checks(model):
    g = parse_sensor_condition("LIT999 > 5 or LIT101 > 5000")
    phi = exactly(capset(("MV101", "ajar")))
    T = Strategy(("a",), (Transition("a", TRUE, exactly(frozenset()), "a"), Transition("a", g, phi, "a")), "a")
    out = " | ".join(validate_strategy(T, model))
    assert "LIT999" in out and "outside the domain" in out and "ajar" in out


def test_undeclared_variable_reported():
    phi = parse_capability_condition("X == _")
    T = Strategy(("a",), (Transition("a", TRUE, phi, "a"), ), "a")
    assert any("undeclared" in v for v in validate_strategy(T))


def test_two_component_literal_reported():
    T = Strategy(("a",), (Transition("a", TRUE, exactly(frozenset({Capability("P1", "on"), Capability("P1", "off")})),
                                     "a"),), "a")
    assert any("more than once" in v for v in validate_strategy(T))


# -- firing -------------------------------------------------------------------------

def test_null_loop_evolves_like_uninjected(model, nominal):
    q, x = nominal
    T = null_strategy()
    step = fire_step(model, T, (q, x, "a"), (T.transitions[0], frozenset()), {}, 600)
    ref = run_plant(model, q, x, 600).final
    assert isinstance(step, Step)
    assert step.x == ref[1] and step.q == ref[0]


def test_conditional_fires_at_threshold(model):
    T = bundled("conditional")
    x = make_physical_state(model, [1000.0, 600.0, 600.0])
    q = Simulator(model, None, x).q
    c_to_d = T.transition("c", "d")
    c_to_c = T.transition("c", "c")
    Y = frozenset([MV101_OPEN])
    step = fire_step(model, T, (q, x, "c"), (c_to_d, Y), {}, 15)
    assert step and step.r == "d" and step.alpha == {"X": Y}
    assert fire_step(model, T, (q, x, "c"), (c_to_c, frozenset()), {}, 15) == Refusal("gamma")


def test_alpha_is_frozen_after_first_use(model):
    T = bundled("conditional")
    x = make_physical_state(model, [1000.0, 600.0, 600.0])
    q = Simulator(model, None, x).q
    Y1 = frozenset([MV101_OPEN])
    Y2 = capset(("MV101", "open"), ("P101", "off"))
    plan = [(T.transition("c", "d"), Y1), (T.transition("d", "d"), Y1), (T.transition("d", "d"), Y2)]
    t = derive(model, T, q, x, plan, GOAL_HIGH, 15)
    assert t.refused and len(t.history) == 2
    assert bind_alpha(T.transition("d", "d").phi, Y2, {"X": Y1}) == {"X": Y1}


def test_sustained_configuration_every_interval(model, nominal):
    Y = capset(("P101", "on"), ("MV101", "close"))
    traj = run_plant(model, *nominal, 1800, Y)
    doms = {a: d.values for a, d in model.actuator_domains.items()}
    i101, imv = model.actuator_index["P101"], model.actuator_index["MV101"]
    assert all(doms["P101"][v] == "on" for v in traj.applied[:, i101])
    assert all(doms["MV101"][v] == "close" for v in traj.applied[:, imv])
    T = sustained_strategy(Y)
    assert validate_strategy(T, model) == []


def test_phi_refusal_and_domain_error(model, nominal):
    q, x = nominal
    T = null_strategy()
    assert fire_step(model, T, (q, x, "a"), (T.transitions[0], frozenset([MV101_OPEN])), {}, 15) == Refusal("phi")
    U = universal_strategy()
    with pytest.raises(CapabilityDomainError):
        fire_step(model, U, (q, x, "u"), (U.transitions[0], capset(("MV101", "ajar"))), {}, 15)


def test_refusal_is_stable(model):
    T = bundled("conditional")
    x = make_physical_state(model, [500.0, 600.0, 600.0])
    q = Simulator(model, None, x).q
    tr = T.transition("c", "d")
    a = fire_step(model, T, (q, x, "c"), (tr, frozenset([MV101_OPEN])), {}, 15)
    b = fire_step(model, T, (q, x, "c"), (tr, frozenset([MV101_OPEN])), {}, 15)
    assert a == b == Refusal("gamma")
    assert x == make_physical_state(model, [500.0, 600.0, 600.0])


def test_fire_step_wrong_source(model, nominal):
    T = bundled("conditional")
    with pytest.raises(ValueError):
        fire_step(model, T, (*nominal, "c"), (T.transition("d", "d"), frozenset()), {}, 15)


def test_sustained_mv101_reaches_goal(model, nominal):
    T = sustained_strategy([MV101_OPEN])
    tr = T.transitions[0]
    t = derive(model, T, *nominal, [(tr, frozenset([MV101_OPEN]))] * 3, GOAL_HIGH, 600)
    assert t.successful and len(t.history) == 3 == len(t.steps) - 1


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sets(st.sampled_from([("MV101", "open"), ("P101", "off"), ("P102", "off"), ("MV302", "close"),
                                         ("P401", "off")])), min_size=1, max_size=4),
       st.floats(min_value=400, max_value=800))
def test_derived_traces_verify(model, plan_sets, level):
    T = universal_strategy()
    x = make_physical_state(model, [level, 600.0, 600.0])
    q = Simulator(model, None, x).q
    plan = [(T.transitions[0], capset(*s)) for s in plan_sets]
    t = derive(model, T, q, x, plan, GOAL_HIGH, 60)
    assert verify_trace(model, T, t) == []
    assert t.successful == GOAL_HIGH.evaluate(observe(model, t.final[1]))


def test_verify_trace_detects_tampering(model, nominal):
    T = universal_strategy()
    t = derive(model, T, *nominal, [(T.transitions[0], frozenset([MV101_OPEN]))] * 2, GOAL_HIGH, 60)
    t.history = (t.history[0], frozenset())
    assert any("does not follow" in p for p in verify_trace(model, T, t))


# -- files ---------------------------------------------------------------------------

def test_strategy_file_round_trip(tmp_path):
    T = bundled("conditional")
    p = tmp_path / "c.yaml"
    dump_strategy(T, p)
    T2 = load_strategy(p)
    assert T2.states == T.states and T2.initial == T.initial and T2.variables == T.variables
    assert set(T2.transitions) == set(T.transitions)


def test_accepting_states_round_trip():
    T = loads_strategy("states: [a, b]\naccepting: [b]\ntransitions:\n"
                       "  - {from: a, to: b, phi: 'true'}\n  - {from: b, to: b, phi: 'true'}\n")
    assert T.accepting == {"b"} and not T.is_accepting("a")
    assert loads_strategy(dump_strategy(T)).accepting == {"b"}


def test_syntax_error_position():
    text = ("states: [a]\n"
            "transitions:\n"
            "  - {from: a, to: a, gamma: \"LIT101 >> 3\", phi: \"true\"}\n")
    with pytest.raises(StrategyFormatError) as e:
        loads_strategy(text)
    # the offending '>' is on line 3, column 38 of the file
    assert "line 3, column 38" in str(e.value) and "gamma" in str(e.value)


def test_malformed_file():
    with pytest.raises(StrategyFormatError):
        loads_strategy("states: [a]\ntransitions:\n  - {to: a}\n")
    with pytest.raises(StrategyFormatError):
        loads_strategy("- just\n- a list\n")
    with pytest.raises(StrategyFormatError):
        loads_strategy("states: [a]\nvariables: [X]\ntransitions:\n  - {from: a, to: a, phi: 'Y == _'}\n")


def test_strategy_universe_lists_spoof_values():
    d = {"universe": ["[LIT101,0]", "[LIT101,1100]", ["MV101", "open"]]}
    assert strategy_universe(d) == [Capability("LIT101", 0.0), Capability("LIT101", 1100.0), MV101_OPEN]
