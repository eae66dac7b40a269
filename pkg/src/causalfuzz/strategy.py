"""Test strategies, derivation of tests against a plant, and strategy files.

A strategy is a labelled transition system.  Each transition carries a
sensor condition ``gamma`` (must hold on the true readings before firing)
and a capability condition ``phi`` (constrains the capability set used
while the transition is active).  States may be any hashable value; files
use strings.

Strategies optionally carry a set of accepting states.  Histories of a
strategy are the label sequences of paths from the initial state that end
in an accepting state; by default every state accepts, which makes the
language prefix closed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, NamedTuple

import yaml

from .capabilities import Capability, one_per_component
from .conditions import (TRUE, CAnd, CapabilityCondition, CFalse, Cmp, CNot, COr, CTrue, Eq, Lit,
                         SAnd, SensorCondition, SNot, SOr, STrue, Subset, exactly, format_capability_condition,
                         format_sensor_condition, parse_capability_condition, parse_capability_set,
                         parse_sensor_condition)
from .errors import (CapabilityDomainError, ConditionSyntaxError, StrategyFormatError,
                     UnboundVariableError, UnknownComponentError)
from .plant import PlantModel, Simulator, check_capabilities, goal_satisfied, observe

State = Hashable


@dataclass(frozen=True)
class Transition:
    src: State
    gamma: SensorCondition
    phi: CapabilityCondition
    dst: State

    def __str__(self):
        return (f"{self.src} --[{format_sensor_condition(self.gamma)} |- "
                f"{format_capability_condition(self.phi)}]--> {self.dst}")


@dataclass(frozen=True)
class Strategy:
    states: tuple
    transitions: tuple
    initial: State
    variables: tuple = ()
    accepting: frozenset | None = None  # None: every state accepts
    name: str = ""
    _out: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "variables", tuple(self.variables))
        if self.accepting is not None:
            object.__setattr__(self, "accepting", frozenset(self.accepting))
        out: dict = {s: [] for s in self.states}
        for t in self.transitions:
            out.setdefault(t.src, []).append(t)
        object.__setattr__(self, "_out", {k: tuple(v) for k, v in out.items()})

    def outgoing(self, r: State) -> tuple:
        return self._out.get(r, ())

    def is_accepting(self, r: State) -> bool:
        return self.accepting is None or r in self.accepting

    @property
    def accepting_states(self) -> frozenset:
        return frozenset(self.states) if self.accepting is None else self.accepting

    def transition(self, src: State, dst: State) -> Transition | None:
        for t in self.outgoing(src):
            if t.dst == dst:
                return t
        return None

    def explicit_sets(self) -> set:
        """Capability sets written literally in some ``phi``."""
        out: set = set()
        for t in self.transitions:
            _literals(t.phi, out)
        return out

    def __len__(self):
        return len(self.states)


def _literals(phi, out):
    if isinstance(phi, (Subset, Eq)):
        for e in (phi.left, phi.right):
            _exp_literals(e, out)
    elif isinstance(phi, (CAnd, COr)):
        for c in phi.items:
            _literals(c, out)
    elif isinstance(phi, CNot):
        _literals(phi.item, out)


def _exp_literals(e, out):
    if isinstance(e, Lit):
        out.add(e.caps)
    for attr in ("left", "right"):
        sub = getattr(e, attr, None)
        if sub is not None:
            _exp_literals(sub, out)


def null_strategy() -> Strategy:
    return Strategy(("a",), (Transition("a", TRUE, exactly(frozenset()), "a"),), "a", name="null")


def universal_strategy() -> Strategy:
    """One state with an unconstrained self-loop."""
    return Strategy(("u",), (Transition("u", TRUE, CTrue(), "u"),), "u", name="universal")


def sustained_strategy(Y: Iterable[Capability]) -> Strategy:
    return Strategy(("b",), (Transition("b", TRUE, exactly(frozenset(Y)), "b"),), "b", name="sustained")


# ---------------------------------------------------------------------------
# validation


def _admits_empty(phi) -> bool:
    if isinstance(phi, Eq) and (isinstance(phi.left, Lit) or isinstance(phi.right, Lit)):
        return True
    try:
        return phi.evaluate(frozenset(), {})
    except UnboundVariableError:
        return False


def validate_strategy(T: Strategy, model: PlantModel | None = None) -> list:
    """List of human-readable violations; empty when ``T`` is well formed."""
    out = []
    states = set(T.states)
    if len(states) != len(T.states):
        out.append("duplicate state")
    if T.initial not in states:
        out.append(f"initial state {T.initial!r} is not a state")
    if T.accepting is not None and not T.accepting <= states:
        out.append("accepting states must be states")
    pairs = set()
    for t in T.transitions:
        for end in (t.src, t.dst):
            if end not in states:
                out.append(f"transition {t}: unknown state {end!r}")
        if (t.src, t.dst) in pairs:
            out.append(f"duplicate edge {t.src!r} -> {t.dst!r}")
        pairs.add((t.src, t.dst))
        undeclared = t.phi.variables() - set(T.variables)
        if undeclared:
            out.append(f"transition {t.src!r}->{t.dst!r}: undeclared variable(s) {sorted(undeclared)}")
        if model is not None:
            for s in sorted(t.gamma.sensors()):
                if s not in model.sensor_index:
                    out.append(f"transition {t.src!r}->{t.dst!r}: unknown sensor {s!r}")
            for msg in _constant_ranges(t.gamma, model):
                out.append(f"transition {t.src!r}->{t.dst!r}: {msg}")
    for Y in T.explicit_sets():
        if not one_per_component(Y):
            out.append(f"capability set {sorted(Y)} uses a component more than once")
        if model is not None:
            try:
                check_capabilities(model, Y)
            except (CapabilityDomainError, UnknownComponentError) as e:
                out.append(str(e))
    for r in T.states:
        if not _live(T.outgoing(r)):
            out.append(f"liveness: state {r!r} may have no transition to fire")
    return out


_COMPLEMENT = {"<": ">=", ">=": "<", "<=": ">", ">": "<="}


def _live(trs) -> bool:
    # a do-nothing loop that is always enabled, or sensor conditions that
    # cover every reading (g / not g, or x < k / x >= k)
    if any(isinstance(t.gamma, STrue) and _admits_empty(t.phi) for t in trs):
        return True
    gs = [t.gamma for t in trs if not isinstance(t.phi, CFalse)]
    if any(isinstance(g, STrue) for g in gs):
        return True
    for g in gs:
        for h in gs:
            if isinstance(h, SNot) and h.item == g:
                return True
            if (isinstance(g, Cmp) and isinstance(h, Cmp) and g.sensor == h.sensor
                    and g.value == h.value and _COMPLEMENT.get(g.op) == h.op):
                return True
    return False


def _constant_ranges(gamma, model):
    stack = [gamma]
    while stack:
        g = stack.pop()
        if isinstance(g, Cmp) and g.sensor in model.sensor_domains:
            d = model.sensor_domains[g.sensor]
            if not d.lo <= g.value <= d.hi:
                yield f"constant {g.value:g} outside the domain of {g.sensor}"
        elif isinstance(g, (SAnd, SOr)):
            stack.extend(g.items)
        elif isinstance(g, SNot):
            stack.append(g.item)


# ---------------------------------------------------------------------------
# derivation


class Refusal(NamedTuple):
    reason: str  # "gamma" or "phi"

    def __bool__(self):
        return False


class Step(NamedTuple):
    q: object
    x: object
    r: State
    alpha: dict


def bind_alpha(phi: CapabilityCondition, Y: frozenset, alpha: Mapping | None) -> dict:
    """Bind every still-unbound variable of ``phi`` to ``Y``; earlier bindings stay fixed."""
    out = dict(alpha or {})
    for v in phi.variables():
        out.setdefault(v, frozenset(Y))
    return out


def fire_step(model: PlantModel, T: Strategy, current, chosen, alpha=None, dt: float = 1.0):
    """Fire ``chosen = (transition, Y)`` from ``current = (q, x, r)``.

    Returns a :class:`Step` or a falsy :class:`Refusal`.
    """
    q, x, r = current
    tr, Y = chosen
    if tr.src != r:
        raise ValueError(f"transition leaves {tr.src!r}, not {r!r}")
    sim = Simulator(model, q, x)
    res = fire_on(sim, tr, Y, alpha, dt)
    if not res:
        return res
    return Step(sim.q, sim.x, tr.dst, res)


def fire_on(sim: Simulator, tr: Transition, Y: frozenset, alpha, dt: float):
    """In-place variant of :func:`fire_step`; returns the new assignment or a refusal."""
    if not tr.gamma.evaluate(sim.readings()):
        return Refusal("gamma")
    alpha2 = bind_alpha(tr.phi, Y, alpha)
    if not tr.phi.evaluate(frozenset(Y), alpha2):
        return Refusal("phi")
    sim.advance(Y, dt)
    return alpha2 if alpha2 else _Bound()


class _Bound(dict):
    """Empty but truthy assignment."""

    def __bool__(self):
        return True


@dataclass
class TestTrace:
    """A derived test: synchronized plant and strategy states plus its history."""

    steps: list  # (q, x, r)
    history: tuple
    assignment: dict
    goal: SensorCondition
    successful: bool
    dt: float = 1.0
    refused: bool = False

    __test__ = False  # not a pytest class

    @property
    def final(self):
        return self.steps[-1]

    def __len__(self):
        return len(self.history)


def derive(model: PlantModel, T: Strategy, q0, x0, plan, goal: SensorCondition, dt: float,
           alpha=None, stop_on_goal: bool = False) -> TestTrace:
    """Fire ``plan`` (a sequence of ``(transition, Y)``) and build the trace.

    Stops at the first refusal, or at the first goal hit when
    ``stop_on_goal`` is set.
    """
    sim = Simulator(model, q0, x0)
    r = T.initial
    steps = [(sim.q.copy(), sim.x.copy(), r)]
    hist = []
    alpha = dict(alpha or {})
    refused = False
    for tr, Y in plan:
        if tr.src != r:
            raise ValueError(f"plan leaves the path at {r!r}")
        res = fire_on(sim, tr, Y, alpha, dt)
        if not res:
            refused = True
            break
        alpha = dict(res)
        r = tr.dst
        hist.append(frozenset(Y))
        steps.append((sim.q.copy(), sim.x.copy(), r))
        if stop_on_goal and sim.goal_satisfied(goal):
            break
    ok = goal_satisfied(model, goal, steps[-1][1])
    return TestTrace(steps, tuple(hist), alpha, goal, ok, dt, refused)


def verify_trace(model: PlantModel, T: Strategy, trace: TestTrace) -> list:
    """Re-check a trace step by step; returns the list of problems found."""
    out = []
    if len(trace.history) != len(trace.steps) - 1:
        out.append("history length does not match the number of steps")
        return out
    if trace.steps[0][2] != T.initial:
        out.append("trace does not start in the initial state")
    for i, Y in enumerate(trace.history):
        q, x, r = trace.steps[i]
        q2, x2, r2 = trace.steps[i + 1]
        tr = T.transition(r, r2)
        if tr is None:
            out.append(f"step {i + 1}: no transition {r!r} -> {r2!r}")
            continue
        if not tr.gamma.evaluate(observe(model, x)):
            out.append(f"step {i + 1}: sensor condition false before firing")
        try:
            if not tr.phi.evaluate(Y, trace.assignment):
                out.append(f"step {i + 1}: capability condition false")
        except UnboundVariableError as e:
            out.append(f"step {i + 1}: {e}")
        sim = Simulator(model, q, x).advance(Y, trace.dt)
        if sim.x != x2 or sim.q != q2:
            out.append(f"step {i + 1}: plant state does not follow from the previous one")
    if trace.successful != goal_satisfied(model, trace.goal, trace.steps[-1][1]):
        out.append("success flag disagrees with the goal on the final state")
    return out


# ---------------------------------------------------------------------------
# strategy files


class _Marked(str):
    line = 0
    column = 0
    quoted = False


class _Loader(yaml.SafeLoader):
    pass


def _construct_str(loader, node):
    s = _Marked(loader.construct_scalar(node))
    s.line = node.start_mark.line + 1
    s.column = node.start_mark.column + 1
    s.quoted = node.style in ("'", '"')
    return s


_Loader.add_constructor("tag:yaml.org,2002:str", _construct_str)


def _cond_text(v, what):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    raise StrategyFormatError(f"{what} must be a string, got {v!r}")


def _parse_at(parse, text, what, *args):
    try:
        return parse(text, *args)
    except ConditionSyntaxError as e:
        line = getattr(text, "line", 0)
        if line:
            col = text.column + (1 if text.quoted else 0) + e.offset
            raise StrategyFormatError(f"line {line}, column {col}: {what}: {e.message}") from None
        raise StrategyFormatError(f"{what}: {e}") from None


def strategy_from_dict(d: Mapping, where: str = "") -> Strategy:
    try:
        states = [str(s) for s in d["states"]]
        variables = [str(v) for v in d.get("variables", []) or []]
        trs = []
        for item in d.get("transitions", []) or []:
            g = _cond_text(item.get("gamma", "true"), "gamma")
            p = _cond_text(item.get("phi", "true"), "phi")
            trs.append(Transition(str(item["from"]),
                                  _parse_at(parse_sensor_condition, g, "gamma"),
                                  _parse_at(parse_capability_condition, p, "phi", variables),
                                  str(item["to"])))
        acc = d.get("accepting")
        T = Strategy(tuple(states), tuple(trs), str(d.get("initial", states[0] if states else "")),
                     tuple(variables), frozenset(str(a) for a in acc) if acc is not None else None,
                     str(d.get("name", "")))
    except (KeyError, TypeError, AttributeError, IndexError) as e:
        raise StrategyFormatError(f"{where}malformed strategy: {e!r}") from None
    return T


def strategy_universe(d: Mapping) -> list:
    """Capabilities listed under ``universe`` (sensor spoof values, for instance)."""
    out = []
    for item in d.get("universe", []) or []:
        text = item if isinstance(item, str) else "{" + f"[{item[0]},{item[1]}]" + "}"
        if not text.strip().startswith("{"):
            text = "{" + text + "}"
        out.extend(sorted(_parse_at(parse_capability_set, text, "universe")))
    return out


def _state_name(s) -> str:
    if isinstance(s, tuple):
        return "(" + ",".join(_state_name(x) for x in s) + ")"
    return str(s)


def strategy_to_dict(T: Strategy) -> dict:
    d = {"name": T.name or "strategy",
         "states": [_state_name(s) for s in T.states],
         "initial": _state_name(T.initial)}
    if T.variables:
        d["variables"] = list(T.variables)
    if T.accepting is not None:
        d["accepting"] = [_state_name(s) for s in T.states if s in T.accepting]
    d["transitions"] = [{"from": _state_name(t.src), "to": _state_name(t.dst),
                         "gamma": format_sensor_condition(t.gamma),
                         "phi": format_capability_condition(t.phi)} for t in T.transitions]
    return d


def load_strategy(path) -> Strategy:
    with open(path) as fh:
        text = fh.read()
    return loads_strategy(text, f"{path}: ")


def loads_strategy(text: str, where: str = "") -> Strategy:
    try:
        d = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as e:
        raise StrategyFormatError(f"{where}{e}") from None
    if not isinstance(d, Mapping):
        raise StrategyFormatError(f"{where}expected a mapping at the top level")
    try:
        return strategy_from_dict(d, where)
    except StrategyFormatError as e:
        if where and not str(e).startswith(where):
            raise StrategyFormatError(f"{where}{e}") from None
        raise


def dump_strategy(T: Strategy, path=None) -> str:
    text = yaml.safe_dump(strategy_to_dict(T), sort_keys=False, allow_unicode=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
