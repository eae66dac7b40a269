"""Counterfactual causality analysis of successful tests.

A test is replayed with one capability removed over a maximal slice of
equal capability sets.  If the goal is still reached the capability was
not needed there and the shorter history replaces the original; otherwise
the capability is marked causal.  The result over-approximates the causal
capabilities of the test, using a number of replays linear in its events.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .capabilities import EMPTY, Capability, cset, history_slice, to_jsonable_history
from .conditions import TRUE, SensorCondition, exactly, format_sensor_condition
from .errors import NotReproducibleError
from .plant import ControlState, PhysicalState, PlantModel
from .strategy import Strategy, TestTrace, Transition, derive

GRACE_INTERVALS = 2


def replay_strategy(pi) -> Strategy:
    """Chain ``s0 -> ... -> sn`` firing ``Y1 .. Yn``, then an empty loop on ``sn``."""
    pi = tuple(frozenset(y) for y in pi)
    states = tuple(f"s{i}" for i in range(len(pi) + 1))
    trs = [Transition(states[i], TRUE, exactly(Y), states[i + 1]) for i, Y in enumerate(pi)]
    trs.append(Transition(states[-1], TRUE, exactly(EMPTY), states[-1]))
    return Strategy(states, tuple(trs), states[0], name="replay")


def remove_capability(pi, y: Capability, k: int, l: int) -> tuple:
    """``pi`` with ``y`` removed from positions ``k..l`` (1-based, inclusive)."""
    history_slice(pi, k, l)  # range check
    return tuple(frozenset(Y) - {y} if k <= i <= l else frozenset(Y) for i, Y in enumerate(pi, 1))


def maximal_slices(pi) -> list:
    """Run-length decomposition ``[(k, l, Y), ...]`` with 1-based bounds."""
    out = []
    for i, Y in enumerate(pi, 1):
        Y = frozenset(Y)
        if out and out[-1][2] == Y:
            out[-1] = (out[-1][0], i, Y)
        else:
            out.append((i, i, Y))
    return out


@dataclass
class ReplaySpec:
    history: tuple
    q0: ControlState
    x0: PhysicalState
    goal: SensorCondition
    dt: float

    def __post_init__(self):
        self.history = tuple(frozenset(y) for y in self.history)


@dataclass
class CausalRecord:
    capability: Capability
    k: int
    l: int
    verdict: str  # "causal" or "pruned"
    counterexample: TestTrace | None = None

    def to_json(self) -> dict:
        d = {"capability": [self.capability.component, self.capability.value],
             "k": self.k, "l": self.l, "verdict": self.verdict}
        if self.counterexample is not None:
            d["counterexample"] = to_jsonable_history(self.counterexample.history)
        return d


class SimulatorExecutor:
    """Replays histories on fresh simulator instances and counts the replays."""

    def __init__(self, model: PlantModel, grace: int = GRACE_INTERVALS):
        self.model = model
        self.grace = grace
        self.probes = 0

    def replay(self, spec: ReplaySpec, history) -> TestTrace:
        """Replay ``history`` plus up to ``grace`` empty intervals; stop at the first goal hit.

        The returned trace covers the executed prefix only.
        """
        self.probes += 1
        history = tuple(frozenset(y) for y in history)
        T = replay_strategy(history)
        chain = [T.transitions[i] for i in range(len(history))]
        loop = T.transitions[-1]
        plan = list(zip(chain, history)) + [(loop, EMPTY)] * self.grace
        # a test whose start state already meets the goal needs no steps
        return derive(self.model, T, spec.q0, spec.x0, plan, spec.goal, spec.dt, stop_on_goal=True)


def is_causal(spec: ReplaySpec, y: Capability, k: int, l: int, executor) -> tuple:
    """``(True, None)`` if removing ``y`` over ``k..l`` defeats the goal, else ``(False, trace)``."""
    t = executor.replay(spec, remove_capability(spec.history, y, k, l))
    if t.successful:
        return False, t
    return True, None


@dataclass
class PruneResult:
    trace: TestTrace
    records: list = field(default_factory=list)
    probes: int = 0

    @property
    def causal_set(self) -> frozenset:
        return cset(self.trace.history)

    def __iter__(self):  # allows ``t_min, records = prune(...)``
        yield self.trace
        yield self.records


def prune(spec: ReplaySpec, executor) -> PruneResult:
    """Shrink a successful test to an over-approximation of its causal capabilities."""
    start = executor.probes
    trace = executor.replay(spec, spec.history)
    if not trace.successful:
        raise NotReproducibleError(
            f"replay does not reach {format_sensor_condition(spec.goal)} from the recorded start", trace)
    pi = trace.history
    # verdicts survive later removals: a slice keeps its bounds unless it
    # merges with a neighbour, in which case it is probed again
    causal: set = set()
    records = []
    while True:
        pick = None
        for k, l, Y in maximal_slices(pi):
            for y in sorted(Y):
                if (y, k, l) not in causal:
                    pick = (y, k, l)
                    break
            if pick:
                break
        if pick is None:
            break
        y, k, l = pick
        work = ReplaySpec(pi, spec.q0, spec.x0, spec.goal, spec.dt)
        ok, cex = is_causal(work, y, k, l, executor)
        if ok:
            causal.add(pick)
            records.append(CausalRecord(y, k, l, "causal"))
        else:
            records.append(CausalRecord(y, k, l, "pruned", cex))
            trace, pi = cex, cex.history
    return PruneResult(trace, records, executor.probes - start)


def history_events(pi) -> int:
    """Number of capability usages ``sum |Y_i|``."""
    return sum(len(y) for y in pi)
