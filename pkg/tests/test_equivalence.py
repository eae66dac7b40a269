import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalfuzz.capabilities import Capability, capset, cset
from causalfuzz.conditions import TRUE, CTrue, exactly, not_member, parse_sensor_condition
from causalfuzz.equivalence import (CAPABILITY_SET, STRONG_ORDER, STRONG_SET, EquivalenceClassSpec, ExclusionStack,
                                    compose, cord, enumerate_language, equivalent, excl, excl_capability_set,
                                    excl_strong_order, excl_strong_set, is_prefix, language_contains, normalize_kind,
                                    simplify, tracker_accepts, tracker_for, unsatisfiable)
from causalfuzz.errors import BudgetExceeded, EmptySetError, NotDeduplicatedError, SizeCapExceeded
from causalfuzz.strategy import Strategy, Transition, dump_strategy, loads_strategy, null_strategy, universal_strategy

from oracles import brute_equivalent, histories, powerset, random_strategy

p1, p2, p3 = Capability("p1", "on"), Capability("p2", "on"), Capability("p3", "on")
E = frozenset()
P = frozenset([p1])
Q = frozenset([p1, p2])
R = frozenset([p2])
S = frozenset([p3])
UNIVERSE = [E, P, R, Q]


def H(*sets):
    return tuple(sets)


def wait_then_act_strategy():
    """Wait with no capabilities while gamma holds, then anything except p3."""
    g = parse_sensor_condition("LIT101 < 1000")
    ng = parse_sensor_condition("not LIT101 < 1000")
    return Strategy(("a", "b"), (Transition("a", g, exactly(E), "a"),
                                 Transition("a", ng, not_member(p3), "b"),
                                 Transition("b", TRUE, not_member(p3), "b")), "a")


# -- cord and relations ------------------------------------------------------------

def test_cord_examples():
    assert cord(H(P, Q, Q, R, P, P)) == H(P, Q, R, P)
    assert cord(H(P, P, Q, R, R, P)) == H(P, Q, R, P)
    assert cord(H(P, P, P, P)) == H(P)
    assert cord(()) == ()


@given(st.lists(st.sampled_from(UNIVERSE), max_size=8))
def test_cord_idempotent(pi):
    assert cord(cord(pi)) == cord(pi)


def test_equivalent_examples():
    spec = EquivalenceClassSpec(CAPABILITY_SET, H(P, P, P, Q, Q, Q, P, P, P), Q)
    assert equivalent(spec, H(P, P, P, Q, Q, Q, P, P, P), H(Q, Q))
    so = EquivalenceClassSpec(STRONG_ORDER, H(P, Q, Q, R, P, P))
    assert equivalent(so, H(P, Q, Q, R, P, P), H(P, P, Q, R, R, P))
    assert equivalent(so, H(P, Q, R, P), H(P, Q, R, P, S))
    assert not equivalent(so, H(P, Q), H(P, R))


def test_strong_order_not_transitive():
    so = EquivalenceClassSpec(STRONG_ORDER, H(P))
    assert equivalent(so, H(P, Q), H(P)) and equivalent(so, H(P), H(P, R))
    assert not equivalent(so, H(P, Q), H(P, R))


@given(st.sampled_from([CAPABILITY_SET, STRONG_SET, STRONG_ORDER]),
       st.lists(st.sampled_from(UNIVERSE), min_size=1, max_size=5),
       st.lists(st.sampled_from(UNIVERSE), max_size=5))
def test_equivalent_reflexive_and_symmetric(kind, a, b):
    if kind == CAPABILITY_SET and not cset(a):
        return
    sa = EquivalenceClassSpec(kind, a)
    assert equivalent(sa, a, a)
    assert equivalent(sa, a, b) == equivalent(sa, b, a)


def test_spec_checks():
    with pytest.raises(ValueError):
        EquivalenceClassSpec(CAPABILITY_SET, H(P), Q)
    assert normalize_kind("causal-set") == CAPABILITY_SET
    assert normalize_kind("strong-order") == STRONG_ORDER
    with pytest.raises(ValueError):
        normalize_kind("weak")
    assert is_prefix((1, 2), (1, 2, 3)) and not is_prefix((2,), (1, 2))


# -- Excl constructions ---------------------------------------------------------------

def test_excl_capability_set_shape():
    T = excl_capability_set(Q)
    assert len(T.states) == 3 and len(T.transitions) == 5
    with pytest.raises(EmptySetError):
        excl_capability_set(E)


def test_excl_capability_set_single():
    lang = enumerate_language(excl_capability_set(P), [E, P, R], 3)
    assert lang == {pi for pi in histories([E, P, R], 3) if p1 not in cset(pi)}


def test_excl_capability_set_membership():
    T = excl_capability_set(Q)
    assert not language_contains(T, H(P, P, Q))
    assert language_contains(T, H(P, P, P))


def test_excl_strong_set_examples():
    T = excl_strong_set(Q)
    assert language_contains(T, H(P, P))
    assert not language_contains(T, H(P, R))
    assert not language_contains(T, H(Q))
    assert language_contains(T, H(Q, S))
    lang = enumerate_language(T, [E, P, R, Q, S], 4)
    assert lang == {pi for pi in histories([E, P, R, Q, S], 4) if cset(pi) != Q}


def test_excl_strong_set_cap():
    caps = [Capability(f"c{i}", "on") for i in range(13)]
    with pytest.raises(SizeCapExceeded):
        excl_strong_set(frozenset(caps))
    assert len(excl_strong_set(frozenset(caps[:3]), cap=3).states) >= 8


def test_excl_strong_order_examples():
    T = excl_strong_order(H(P, Q, P))
    assert not language_contains(T, H(P, Q))
    assert not language_contains(T, H(P, P, Q, Q, P, R))
    assert language_contains(T, H(P, R))
    with pytest.raises(NotDeduplicatedError):
        excl_strong_order(H(P, P, Q))


@pytest.mark.parametrize("kind", [CAPABILITY_SET, STRONG_SET, STRONG_ORDER])
def test_excl_language_is_class_complement(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    universe = [E, P, R, Q]
    everything = set(histories(universe, 4))
    for _ in range(15):
        n = int(rng.integers(1, 5))
        anchor = tuple(universe[int(i)] for i in rng.integers(len(universe), size=n))
        Y = None
        if kind == CAPABILITY_SET:
            if not cset(anchor):
                continue
            caps = sorted(cset(anchor))
            Y = frozenset(c for c in caps if rng.random() < 0.6) or frozenset(caps[:1])
        spec = EquivalenceClassSpec(kind, anchor, Y)
        lang = enumerate_language(excl(spec), universe, 4)
        assert lang == {pi for pi in everything if not brute_equivalent(kind, anchor, spec.Y, pi)}


# -- composition -----------------------------------------------------------------------

def test_composition_blocks_joint_use():
    T = compose(wait_then_act_strategy(), excl_capability_set(Q))
    assert not language_contains(T, H(E, E, E, P, P, Q, Q, Q, Q))
    assert language_contains(T, H(E, E, P, P, P, P, P))
    assert not language_contains(T, H(E, S))
    assert language_contains(wait_then_act_strategy(), H(E, E, E, P, P, Q, Q, Q, Q))
    lang = enumerate_language(T, [E, P, R, Q, S], 3)
    base = enumerate_language(wait_then_act_strategy(), [E, P, R, Q, S], 3)
    assert lang == {pi for pi in base if not Q <= cset(pi)}


def test_compose_with_universal_is_identity():
    T = wait_then_act_strategy()
    a = enumerate_language(T, [E, P, S], 3)
    b = enumerate_language(compose(T, universal_strategy()), [E, P, S], 3)
    assert a == b


def test_compose_associative():
    rng = np.random.default_rng(3)
    caps = [p1, p2]
    universe = powerset(caps)
    for _ in range(10):
        A, B, C = (random_strategy(rng, caps, 2) for _ in range(3))
        left = enumerate_language(compose(compose(A, B), C), universe, 3)
        right = enumerate_language(compose(A, compose(B, C)), universe, 3)
        assert left == right


def test_compose_renames_clashing_variables():
    T = loads_strategy("states: [a]\nvariables: [X]\ntransitions:\n  - {from: a, to: a, phi: 'X == _'}\n")
    C = compose(T, T)
    assert len(set(C.variables)) == 2
    assert language_contains(C, H(P, P))
    assert not language_contains(C, H(P, Q))


def test_simplify_keeps_language():
    T = compose(null_strategy(), excl_capability_set(P))
    S_ = simplify(T)
    assert len(S_.transitions) <= len(T.transitions)
    assert enumerate_language(S_, [E, P], 3) == enumerate_language(T, [E, P], 3)
    assert unsatisfiable(compose(Strategy(("a",), (Transition("a", TRUE, exactly(P), "a"),), "a"),
                                 Strategy(("b",), (Transition("b", TRUE, exactly(R), "b"),), "b")).transitions[0].phi)


def test_composed_strategy_file_round_trip():
    T = compose(wait_then_act_strategy(), excl_capability_set(Q))
    T2 = loads_strategy(dump_strategy(T))
    assert enumerate_language(T2, [E, P, Q, S], 3) == enumerate_language(T, [E, P, Q, S], 3)


# -- language oracles -------------------------------------------------------------------

def test_language_examples():
    assert language_contains(null_strategy(), H(E, E, E))
    assert language_contains(wait_then_act_strategy(), ())
    assert enumerate_language(null_strategy(), [E, P], 2) == {(), (E,), (E, E)}
    U = universal_strategy()
    assert enumerate_language(U, [E, P], 3) == set(histories([E, P], 3))
    with pytest.raises(BudgetExceeded):
        enumerate_language(U, UNIVERSE, 12, budget=1000)


def test_language_contains_rejects_foreign_sets():
    with pytest.raises(ValueError):
        language_contains(universal_strategy(), H(S), universe=[E, P])


# -- trackers and exclusion stacks ----------------------------------------------------------

@pytest.mark.parametrize("kind", [CAPABILITY_SET, STRONG_SET, STRONG_ORDER])
def test_trackers_match_excl(kind):
    rng = np.random.default_rng(11)
    universe = [E, P, R, Q, S]
    for _ in range(20):
        anchor = tuple(universe[int(i)] for i in rng.integers(len(universe), size=int(rng.integers(1, 4))))
        if kind == CAPABILITY_SET and not cset(anchor):
            continue
        spec = EquivalenceClassSpec(kind, anchor)
        T = excl(spec)
        tr = tracker_for(spec)
        for pi in histories(universe, 3):
            assert tracker_accepts(tr, pi) == language_contains(T, pi), (spec, pi)


def test_exclusion_stack_matches_materialized():
    specs = [EquivalenceClassSpec(CAPABILITY_SET, H(Q)), EquivalenceClassSpec(STRONG_ORDER, H(R, S))]
    stack = ExclusionStack(wait_then_act_strategy())
    for s in specs:
        stack = stack.excluding(s)
    T = stack.materialize()
    universe = [E, P, R, Q, S]
    lang = enumerate_language(T, universe, 3)
    assert lang == {pi for pi in histories(universe, 3) if stack.contains(pi)}


def test_exclusion_oracle_small():
    """Exclusion composed with random strategies removes exactly the anchor's class."""
    rng = np.random.default_rng(2024)
    caps = [p1, p2]
    universe = powerset(caps)
    kinds = [CAPABILITY_SET, STRONG_SET, STRONG_ORDER]
    checked = 0
    while checked < 40:
        T = random_strategy(rng, caps)
        lang = sorted(enumerate_language(T, universe, 4), key=lambda p: (len(p), repr(p)))
        kind = kinds[checked % 3]
        cands = [pi for pi in lang if pi and (kind != CAPABILITY_SET or cset(pi))]
        if not cands:
            continue
        anchor = cands[int(rng.integers(len(cands)))]
        spec = EquivalenceClassSpec(kind, anchor)
        got = enumerate_language(compose(T, excl(spec)), universe, 4)
        assert got == {pi for pi in lang if not equivalent(spec, pi, anchor)}
        checked += 1
