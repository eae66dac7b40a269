"""Equivalence classes of tests and strategies that exclude them.

Three relations between capability histories are supported:

``capability_set``
    both histories use every capability of a fixed set ``Y`` (or are equal);
``strong_set``
    both histories use exactly the same cumulative set of capabilities;
``strong_order``
    the order of distinct consecutive sets of one is a prefix of the other's.

For each relation ``excl(...)`` builds a strategy whose language is exactly
the histories not equivalent to an anchor, and ``compose`` intersects a
strategy with it.  ``language_contains`` and ``enumerate_language`` are
brute-force oracles that ignore sensor conditions.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

from .capabilities import EMPTY, cset, format_history, format_set
from .conditions import (HOLE, TRUE, CAnd, CapabilityCondition, CFalse, CNot, COr, CTrue, Diff, Eq,
                         Exp, Lit, Subset, Union, Var, conj, exactly, not_equal, not_member, sconj)
from .errors import (BudgetExceeded, EmptySetError, NotDeduplicatedError, SizeCapExceeded,
                     UnboundVariableError)
from .strategy import Strategy, Transition

CAPABILITY_SET = "capability_set"
STRONG_SET = "strong_set"
STRONG_ORDER = "strong_order"
KINDS = (CAPABILITY_SET, STRONG_SET, STRONG_ORDER)
KIND_ALIASES = {"causal-set": CAPABILITY_SET, "causal_set": CAPABILITY_SET, "capability-set": CAPABILITY_SET,
                "strong-set": STRONG_SET, "strong-order": STRONG_ORDER}

CLI_NAMES = {CAPABILITY_SET: "causal-set", STRONG_SET: "strong-set", STRONG_ORDER: "strong-order"}

STRONG_SET_CAP = 12
ENUMERATION_BUDGET = 10 ** 6


def normalize_kind(kind: str) -> str:
    k = KIND_ALIASES.get(kind, kind)
    if k not in KINDS:
        raise ValueError(f"unknown equivalence class {kind!r}")
    return k


def cord(pi: Sequence[frozenset]) -> tuple:
    """Collapse runs of equal consecutive sets."""
    out = []
    for y in pi:
        if not out or out[-1] != y:
            out.append(frozenset(y))
    return tuple(out)


def is_prefix(a: Sequence, b: Sequence) -> bool:
    return len(a) <= len(b) and tuple(b[:len(a)]) == tuple(a)


@dataclass(frozen=True)
class EquivalenceClassSpec:
    kind: str
    anchor: tuple
    Y: frozenset | None = None  # capability_set only

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        object.__setattr__(self, "anchor", tuple(frozenset(y) for y in self.anchor))
        if self.kind == CAPABILITY_SET:
            Y = cset(self.anchor) if self.Y is None else frozenset(self.Y)
            if not Y <= cset(self.anchor):
                raise ValueError(f"{format_set(Y)} is not used by the anchor history")
            object.__setattr__(self, "Y", Y)

    def contains(self, pi) -> bool:
        """Is ``pi`` equivalent to the anchor?"""
        return equivalent(self, self.anchor, pi)

    def __str__(self):
        if self.kind == CAPABILITY_SET:
            return f"{self.kind}({format_set(self.Y)})"
        return f"{self.kind}({format_history(self.anchor)})"


def equivalent(spec: EquivalenceClassSpec, p1, p2) -> bool:
    p1, p2 = tuple(p1), tuple(p2)
    if spec.kind == CAPABILITY_SET:
        return p1 == p2 or (spec.Y <= cset(p1) and spec.Y <= cset(p2))
    if spec.kind == STRONG_SET:
        return cset(p1) == cset(p2)
    c1, c2 = cord(p1), cord(p2)
    return is_prefix(c1, c2) or is_prefix(c2, c1)


# ---------------------------------------------------------------------------
# Excl constructions


def excl_capability_set(Y: Iterable) -> Strategy:
    """Histories that never use at least one member of ``Y``."""
    ys = sorted(frozenset(Y))
    if not ys:
        raise EmptySetError("cannot exclude the class of the empty set: every history uses it")
    states = ["q0"] + [f"q{i}" for i in range(1, len(ys) + 1)]
    trs = [Transition("q0", TRUE, conj(*[not_member(y) for y in ys]), "q0")]
    for i, y in enumerate(ys, 1):
        trs.append(Transition("q0", TRUE, not_member(y), f"q{i}"))
        trs.append(Transition(f"q{i}", TRUE, not_member(y), f"q{i}"))
    return Strategy(tuple(states), tuple(trs), "q0", name=f"excl_set{format_set(ys)}")


def _subset_name(Y) -> str:
    return "q{" + ",".join(str(c) for c in sorted(Y)) + "}"


def excl_strong_set(C: Iterable, cap: int = STRONG_SET_CAP) -> Strategy:
    """Histories whose cumulative set differs from ``C``.

    One state per subset of ``C`` tracks the capabilities used so far; the
    state for ``C`` itself is the only rejecting one, and ``q*`` absorbs
    every history that strays outside ``C``.
    """
    C = frozenset(C)
    if len(C) > cap:
        raise SizeCapExceeded(f"strong-set exclusion over {len(C)} capabilities exceeds the cap of {cap}")
    items = sorted(C)
    subsets = [frozenset(s) for n in range(len(items) + 1) for s in itertools.combinations(items, n)]
    name = {Y: _subset_name(Y) for Y in subsets}
    star = "q*"
    lit_c = Lit(C)
    leave = CNot(Eq(Diff(HOLE, lit_c), Lit(EMPTY)))
    trs = [Transition(star, TRUE, CTrue(), star)]
    for Y in subsets:
        trs.append(Transition(name[Y], TRUE, leave, star))
        for Y2 in subsets:
            if Y <= Y2:
                phi = conj(Subset(Lit(Y2 - Y), HOLE), Subset(HOLE, Lit(Y2)))
                trs.append(Transition(name[Y], TRUE, phi, name[Y2]))
    states = tuple(name[Y] for Y in subsets) + (star,)
    accepting = frozenset(s for s in states if s != name[C])
    return Strategy(states, tuple(trs), name[EMPTY], accepting=accepting,
                    name=f"excl_strong_set{format_set(C)}")


def excl_strong_order(order: Sequence[frozenset]) -> Strategy:
    """Histories whose order of distinct sets is not prefix-related to ``order``.

    ``q0 .. q(k-1)`` follow the pattern; ``qk`` is reached (and accepting)
    once a set breaks it.
    """
    order = tuple(frozenset(y) for y in order)
    k = len(order)
    if k == 0:
        raise NotDeduplicatedError("order must contain at least one set")
    if cord(order) != order:
        raise NotDeduplicatedError(f"{format_history(order)} has repeated consecutive sets")
    q = [f"q{i}" for i in range(k + 1)]
    trs = [Transition(q[0], TRUE, not_equal(HOLE, Lit(order[0])), q[k]),
           Transition(q[k], TRUE, CTrue(), q[k])]
    for i in range(1, k):
        Yi, Yn = order[i - 1], order[i]
        trs.append(Transition(q[i - 1], TRUE, exactly(Yi), q[i]))
        trs.append(Transition(q[i], TRUE, exactly(Yi), q[i]))
        trs.append(Transition(q[i], TRUE, conj(not_equal(HOLE, Lit(Yi)), not_equal(HOLE, Lit(Yn))), q[k]))
    return Strategy(tuple(q), tuple(trs), q[0], accepting=frozenset([q[k]]),
                    name=f"excl_order[{format_history(order)}]")


def excl(spec: EquivalenceClassSpec, cap: int = STRONG_SET_CAP) -> Strategy:
    if spec.kind == CAPABILITY_SET:
        return excl_capability_set(spec.Y)
    if spec.kind == STRONG_SET:
        return excl_strong_set(cset(spec.anchor), cap)
    return excl_strong_order(cord(spec.anchor))


# ---------------------------------------------------------------------------
# composition


def _rename_exp(e: Exp, m: dict) -> Exp:
    if isinstance(e, Var):
        return Var(m.get(e.name, e.name))
    if isinstance(e, Diff):
        return Diff(_rename_exp(e.left, m), _rename_exp(e.right, m))
    if isinstance(e, Union):
        return Union(_rename_exp(e.left, m), _rename_exp(e.right, m))
    return e


def rename_variables(phi: CapabilityCondition, m: dict) -> CapabilityCondition:
    if isinstance(phi, Subset):
        return Subset(_rename_exp(phi.left, m), _rename_exp(phi.right, m))
    if isinstance(phi, Eq):
        return Eq(_rename_exp(phi.left, m), _rename_exp(phi.right, m))
    if isinstance(phi, CAnd):
        return CAnd(tuple(rename_variables(c, m) for c in phi.items))
    if isinstance(phi, COr):
        return COr(tuple(rename_variables(c, m) for c in phi.items))
    if isinstance(phi, CNot):
        return CNot(rename_variables(phi.item, m))
    return phi


def compose(T1: Strategy, T2: Strategy, simplify_result: bool = False) -> Strategy:
    """Synchronous product: both strategies fire together on every step."""
    clash = set(T1.variables) & set(T2.variables)
    ren: dict = {}
    taken = set(T1.variables) | set(T2.variables)
    for v in sorted(clash):
        i = 2
        while f"{v}_{i}" in taken:
            i += 1
        ren[v] = f"{v}_{i}"
        taken.add(ren[v])
    variables = tuple(T1.variables) + tuple(ren.get(v, v) for v in T2.variables)
    states = tuple((a, b) for a in T1.states for b in T2.states)
    trs = []
    for t1 in T1.transitions:
        for t2 in T2.transitions:
            phi2 = rename_variables(t2.phi, ren) if ren else t2.phi
            trs.append(Transition((t1.src, t2.src), sconj(t1.gamma, t2.gamma), conj(t1.phi, phi2),
                                  (t1.dst, t2.dst)))
    if T1.accepting is None and T2.accepting is None:
        acc = None
    else:
        acc = frozenset(s for s in states if T1.is_accepting(s[0]) and T2.is_accepting(s[1]))
    name = f"{T1.name or 'T1'}||{T2.name or 'T2'}"
    T = Strategy(states, tuple(trs), (T1.initial, T2.initial), variables, acc, name)
    return simplify(T) if simplify_result else T


def _flatten(phi) -> list:
    if isinstance(phi, CAnd):
        out = []
        for c in phi.items:
            out.extend(_flatten(c))
        return out
    if isinstance(phi, CTrue):
        return []
    return [phi]


def _lit(e):
    return e.caps if isinstance(e, Lit) else None


def unsatisfiable(phi: CapabilityCondition) -> bool:
    """Cheap syntactic check: ``True`` only when no capability set can satisfy ``phi``.

    Looks at conjunctions of the literal forms produced by the Excl
    constructions (exact sets, membership, bounds, leaving a set).
    """
    lower: set = set()
    upper = None
    exact = None
    forbidden: set = set()
    not_exact: list = []
    outside: list = []
    for c in _flatten(phi):
        if isinstance(c, CFalse):
            return True
        if isinstance(c, Eq):
            a, b = c.left, c.right
            lit = _lit(b) if a == HOLE else _lit(a) if b == HOLE else None
            if lit is not None:
                if exact is not None and exact != lit:
                    return True
                exact = lit
        elif isinstance(c, Subset):
            if c.right == HOLE and _lit(c.left) is not None:
                lower |= _lit(c.left)
            elif c.left == HOLE and _lit(c.right) is not None:
                upper = _lit(c.right) if upper is None else upper & _lit(c.right)
        elif isinstance(c, CNot):
            inner = c.item
            if isinstance(inner, Subset) and inner.right == HOLE and _lit(inner.left) is not None \
                    and len(_lit(inner.left)) == 1:
                forbidden |= _lit(inner.left)
            elif isinstance(inner, Eq):
                a, b = inner.left, inner.right
                if a == HOLE and _lit(b) is not None:
                    not_exact.append(_lit(b))
                elif (isinstance(a, Diff) and a.left == HOLE and _lit(a.right) is not None
                      and _lit(b) == EMPTY):
                    outside.append(_lit(a.right))
    if exact is not None:
        return (not lower <= exact or (upper is not None and not exact <= upper) or exact & forbidden
                or exact in not_exact or any(exact <= s for s in outside))
    if lower & forbidden:
        return True
    if upper is not None:
        if not lower <= upper:
            return True
        free = upper - forbidden
        if any(free <= s for s in outside):
            return True
        if lower == free and lower in not_exact:
            return True
    return False


def simplify(T: Strategy) -> Strategy:
    """Drop unsatisfiable transitions, unreachable states and dead ends."""
    trs = [t for t in T.transitions if not unsatisfiable(t.phi)]
    reach = {T.initial}
    frontier = [T.initial]
    succ: dict = {}
    for t in trs:
        succ.setdefault(t.src, []).append(t.dst)
    while frontier:
        r = frontier.pop()
        for s in succ.get(r, ()):
            if s not in reach:
                reach.add(s)
                frontier.append(s)
    pred: dict = {}
    for t in trs:
        pred.setdefault(t.dst, []).append(t.src)
    live = {s for s in reach if T.is_accepting(s)}
    frontier = list(live)
    while frontier:
        r = frontier.pop()
        for s in pred.get(r, ()):
            if s in reach and s not in live:
                live.add(s)
                frontier.append(s)
    keep = live | {T.initial}
    states = tuple(s for s in T.states if s in keep)
    trs = tuple(t for t in trs if t.src in live and t.dst in live)
    acc = None if T.accepting is None else frozenset(s for s in T.accepting if s in keep)
    return Strategy(states, trs, T.initial, T.variables, acc, T.name)


def relabel(T: Strategy) -> Strategy:
    """Replace (possibly nested tuple) state names by ``s0, s1, ...``."""
    m = {s: f"s{i}" for i, s in enumerate(T.states)}
    trs = tuple(Transition(m[t.src], t.gamma, t.phi, m[t.dst]) for t in T.transitions)
    acc = None if T.accepting is None else frozenset(m[s] for s in T.accepting)
    return Strategy(tuple(m.values()), trs, m[T.initial], T.variables, acc, T.name)


# ---------------------------------------------------------------------------
# language oracles


def _assignments(T: Strategy, pi) -> Iterable[dict]:
    if not T.variables:
        yield {}
        return
    cands = sorted({frozenset(y) for y in pi} | {EMPTY}, key=lambda s: sorted(s))
    for combo in itertools.product(cands, repeat=len(T.variables)):
        yield dict(zip(T.variables, combo))


def _fires(t: Transition, Y, alpha) -> bool:
    try:
        return t.phi.evaluate(Y, alpha)
    except UnboundVariableError:
        return False


def _accepts(T: Strategy, pi, alpha) -> bool:
    cur = {T.initial}
    for Y in pi:
        nxt = set()
        for r in cur:
            for t in T.outgoing(r):
                if _fires(t, Y, alpha):
                    nxt.add(t.dst)
        if not nxt:
            return False
        cur = nxt
    return any(T.is_accepting(r) for r in cur)


def language_contains(T: Strategy, pi, universe=None) -> bool:
    """Can ``T`` derive the history ``pi`` (sensor conditions taken as true)?"""
    pi = tuple(frozenset(y) for y in pi)
    if universe is not None:
        allowed = {frozenset(u) for u in universe}
        if any(y not in allowed for y in pi):
            raise ValueError("history uses a set outside the universe")
    return any(_accepts(T, pi, a) for a in _assignments(T, pi))


def _check_budget(n_sets: int, max_len: int, budget: int) -> None:
    total = sum(n_sets ** k for k in range(max_len + 1))
    if total > budget:
        raise BudgetExceeded(f"{total} candidate histories exceed the budget of {budget}")


def enumerate_language(T: Strategy, universe, max_len: int, budget: int = ENUMERATION_BUDGET) -> set:
    """All histories of length ``<= max_len`` over ``universe`` derivable from ``T``."""
    universe = list(dict.fromkeys(frozenset(u) for u in universe))
    _check_budget(len(universe), max_len, budget)
    out: set = set()
    if T.variables:
        for n in range(max_len + 1):
            for pi in itertools.product(universe, repeat=n):
                if language_contains(T, pi):
                    out.add(pi)
        return out

    def step(cur, Y):
        return frozenset(t.dst for r in cur for t in T.outgoing(r) if _fires(t, Y, {}))

    stack = [((), frozenset([T.initial]))]
    while stack:
        pi, cur = stack.pop()
        if any(T.is_accepting(r) for r in cur):
            out.add(pi)
        if len(pi) == max_len:
            continue
        for Y in universe:
            nxt = step(cur, Y)
            if nxt:
                stack.append((pi + (Y,), nxt))
    return out


def all_histories(universe, max_len: int) -> set:
    universe = list(dict.fromkeys(frozenset(u) for u in universe))
    return {pi for n in range(max_len + 1) for pi in itertools.product(universe, repeat=n)}


# ---------------------------------------------------------------------------
# exclusion trackers
#
# Composing a strategy with many Excl strategies multiplies their state
# counts.  A campaign instead keeps the base strategy and one small
# deterministic tracker per excluded class, which accepts the same language
# as the corresponding Excl strategy.

DEAD = None


class YSetTracker:
    """Capabilities of ``Y`` used so far; dead once all of them were used."""

    def __init__(self, Y):
        self.Y = frozenset(Y)
        if not self.Y:
            raise EmptySetError("cannot exclude the class of the empty set")

    def initial(self):
        return EMPTY

    def step(self, s, Z):
        s2 = s | (self.Y & Z)
        return DEAD if s2 == self.Y else s2

    def accepting(self, s) -> bool:
        return True


class StrongSetTracker:
    """Cumulative set while inside ``C``; ``"*"`` once outside."""

    STAR = "*"

    def __init__(self, C):
        self.C = frozenset(C)

    def initial(self):
        return EMPTY

    def step(self, s, Z):
        if s == self.STAR or not Z <= self.C:
            return self.STAR
        return s | Z

    def accepting(self, s) -> bool:
        return s == self.STAR or s != self.C


class StrongOrderTracker:
    """Position in the anchor order, or ``"esc"`` once the pattern is broken."""

    ESC = "esc"

    def __init__(self, order):
        self.order = tuple(frozenset(y) for y in order)
        if not self.order or cord(self.order) != self.order:
            raise NotDeduplicatedError("order must be a non-empty deduplicated history")

    def initial(self):
        return 0

    def step(self, s, Z):
        if s == self.ESC:
            return s
        k = len(self.order)
        if s == 0:
            if Z != self.order[0]:
                return self.ESC
            return DEAD if k == 1 else 1
        if Z == self.order[s - 1]:
            return s
        if Z == self.order[s]:
            return DEAD if s + 1 == k else s + 1
        return self.ESC

    def accepting(self, s) -> bool:
        return s == self.ESC


class NFATracker:
    """Subset simulation of an arbitrary strategy without variables."""

    def __init__(self, T: Strategy):
        if T.variables:
            raise ValueError("tracked strategies must not use variables")
        self.T = T

    def initial(self):
        return frozenset([self.T.initial])

    def step(self, s, Z):
        nxt = frozenset(t.dst for r in s for t in self.T.outgoing(r) if _fires(t, Z, {}))
        return nxt if nxt else DEAD

    def accepting(self, s) -> bool:
        return any(self.T.is_accepting(r) for r in s)


def tracker_for(spec: EquivalenceClassSpec):
    if spec.kind == CAPABILITY_SET:
        return YSetTracker(spec.Y)
    if spec.kind == STRONG_SET:
        return StrongSetTracker(cset(spec.anchor))
    return StrongOrderTracker(cord(spec.anchor))


def tracker_accepts(tracker, pi) -> bool:
    s = tracker.initial()
    for Z in pi:
        s = tracker.step(s, frozenset(Z))
        if s is DEAD:
            return False
    return tracker.accepting(s)


class ExclusionStack:
    """A base strategy composed (lazily) with a list of Excl strategies."""

    def __init__(self, base: Strategy, specs: Sequence[EquivalenceClassSpec] = (), trackers=None):
        self.base = base
        self.specs = tuple(specs)
        self.trackers = tuple(trackers) if trackers is not None else tuple(tracker_for(s) for s in self.specs)

    def excluding(self, spec: EquivalenceClassSpec) -> "ExclusionStack":
        return ExclusionStack(self.base, self.specs + (spec,), self.trackers + (tracker_for(spec),))

    def __len__(self):
        return len(self.specs)

    def initial(self) -> tuple:
        return tuple(t.initial() for t in self.trackers)

    def step(self, states: tuple, Z):
        """Advance every tracker by ``Z``; ``None`` when some tracker dies."""
        out = []
        for tr, s in zip(self.trackers, states):
            s2 = tr.step(s, Z)
            if s2 is DEAD:
                return None
            out.append(s2)
        return tuple(out)

    def accepting(self, states: tuple) -> bool:
        return all(tr.accepting(s) for tr, s in zip(self.trackers, states))

    def admits(self, pi) -> bool:
        """Exclusion side only: is ``pi`` outside every excluded class?"""
        s = self.initial()
        for Z in pi:
            s = self.step(s, frozenset(Z))
            if s is None:
                return False
        return self.accepting(s)

    def contains(self, pi) -> bool:
        return language_contains(self.base, pi) and self.admits(pi)

    def materialize(self, cap: int = 10 ** 4) -> Strategy:
        """Explicit ``base || Excl(1) || ... || Excl(n)``, simplified after each step."""
        T = self.base
        for spec in self.specs:
            E = excl(spec)
            if len(T.states) * len(E.states) > cap * 10:
                raise SizeCapExceeded(f"product of {len(T.states)} and {len(E.states)} states is too large")
            T = simplify(compose(T, E))
            if len(T.states) > cap:
                raise SizeCapExceeded(f"composed strategy has {len(T.states)} states (cap {cap})")
        return T
