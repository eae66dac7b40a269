"""Guided fuzzing of a plant against a test strategy.

Each iteration starts the plant from a random nominal state, plans a short
walk through the strategy by scoring random candidates on a cloned
simulator, executes the chosen walk on the live plant, minimizes a
successful test to its causal capabilities and excludes its equivalence
class from the strategy before the next iteration.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .capabilities import Capability, cset, format_set, one_per_component
from .causal import PruneResult, ReplaySpec, SimulatorExecutor, prune
from .conditions import (HOLE, CAnd, CapabilityCondition, CNot, Cmp, Eq, Lit, SensorCondition, Subset, Var)
from .equivalence import (CAPABILITY_SET, EquivalenceClassSpec, ExclusionStack, equivalent,
                          normalize_kind)
from .errors import NoWalksGenerated, UnknownSensorError, UnsatisfiableInBudget
from .plant import PlantModel, Simulator, make_control_state, random_nominal_state
from .strategy import Strategy, TestTrace, bind_alpha, fire_on, universal_strategy

log = logging.getLogger(__name__)

FITNESS_EPS = 1e-3
DEFAULT_WALKS = 200
DEFAULT_WALK_LEN = 3
SAMPLE_ATTEMPTS = 1000
LEVEL_DT = 600.0
FAST_DT = 15.0


# ---------------------------------------------------------------------------
# goals and objectives


@dataclass(frozen=True)
class ObjectiveSpec:
    sensor: str
    direction: str  # "maximize" or "minimize"
    threshold: float
    safe_lo: float
    safe_hi: float


@dataclass(frozen=True)
class Goal:
    name: str
    condition: SensorCondition
    objective: ObjectiveSpec
    dt: float


def objective_value(spec: ObjectiveSpec, s) -> float:
    """Normalised distance into the safe range; values above 1 are unsafe."""
    if spec.sensor not in s:
        raise UnknownSensorError(f"no reading for {spec.sensor!r}")
    v = s[spec.sensor]
    width = spec.safe_hi - spec.safe_lo
    if spec.direction == "maximize":
        return (v - spec.safe_lo) / width
    return (spec.safe_hi - v) / width


def make_goal(model: PlantModel, name: str, dt: float | None = None) -> Goal:
    """``"<SENSOR>-High"`` (reading above the safe range) or ``"<SENSOR>-Low"``."""
    sensor, _, side = name.rpartition("-")
    sensor, side = sensor.upper(), side.lower()
    if sensor not in model.sensor_domains or side not in ("high", "low"):
        raise UnknownSensorError(f"cannot build goal {name!r}: expected <SENSOR>-High or <SENSOR>-Low")
    d = model.sensor_domains[sensor]
    if side == "high":
        cond, obj = Cmp(sensor, ">", d.safe_hi), ObjectiveSpec(sensor, "maximize", d.safe_hi, d.safe_lo, d.safe_hi)
    else:
        cond, obj = Cmp(sensor, "<", d.safe_lo), ObjectiveSpec(sensor, "minimize", d.safe_lo, d.safe_lo, d.safe_hi)
    if dt is None:
        dt = LEVEL_DT if sensor.startswith("LIT") else FAST_DT
    return Goal(f"{sensor}-{side.capitalize()}", cond, obj, float(dt))


def actuator_universe(model: PlantModel) -> list:
    """Every ``[actuator, value]`` pair of the plant."""
    return [Capability(a, v) for a, d in model.actuator_domains.items() for v in d.values]


# ---------------------------------------------------------------------------
# sampling


def _conjuncts(phi):
    if isinstance(phi, CAnd):
        out = []
        for c in phi.items:
            out.extend(_conjuncts(c))
        return out
    return [phi]


def _guidance(phi, alpha):
    """Forced members, forbidden members, an upper bound and an exact set, if visible."""
    forced, forbidden, upper, exact = set(), set(), None, None
    for c in _conjuncts(phi):
        if isinstance(c, Subset) and c.right == HOLE:
            if isinstance(c.left, Lit):
                forced |= c.left.caps
            elif isinstance(c.left, Var) and c.left.name in alpha:
                forced |= alpha[c.left.name]
        elif isinstance(c, Subset) and c.left == HOLE and isinstance(c.right, Lit):
            upper = c.right.caps if upper is None else upper & c.right.caps
        elif isinstance(c, Eq) and HOLE in (c.left, c.right):
            other = c.right if c.left == HOLE else c.left
            if isinstance(other, Lit):
                exact = other.caps
            elif isinstance(other, Var) and other.name in alpha:
                exact = alpha[other.name]
        elif isinstance(c, CNot) and isinstance(c.item, Subset) and c.item.right == HOLE \
                and isinstance(c.item.left, Lit) and len(c.item.left.caps) == 1:
            forbidden |= c.item.left.caps
    return forced, forbidden, upper, exact


def sample_capability_set(phi: CapabilityCondition, alpha, universe, rng: np.random.Generator,
                          max_attempts: int = SAMPLE_ATTEMPTS, admit=None) -> frozenset:
    """Uniform one-per-component subset of ``universe`` satisfying ``phi`` under ``alpha``.

    Unbound variables are bound to the sampled set itself.  ``admit`` is an
    extra predicate (the exclusion trackers in a campaign).
    """
    alpha = dict(alpha or {})

    def ok(Y):
        return phi.evaluate(Y, bind_alpha(phi, Y, alpha)) and (admit is None or admit(Y))

    forced, forbidden, upper, exact = _guidance(phi, alpha)
    if exact is not None and not one_per_component(exact):
        raise UnsatisfiableInBudget(f"{format_set(exact)} uses a component twice")
    if not one_per_component(forced):
        raise UnsatisfiableInBudget(f"required capabilities {format_set(forced)} use a component twice")
    if exact is not None:
        if ok(exact):
            return exact
        raise UnsatisfiableInBudget(f"{format_set(exact)} does not satisfy the condition")
    by_comp: dict = {}
    for c in sorted(set(universe)):
        by_comp.setdefault(c.component, []).append(c)
    forced_comps = {c.component for c in forced}
    options = []
    for comp, caps in by_comp.items():
        if comp in forced_comps:
            continue
        opts = [c for c in caps if c not in forbidden and (upper is None or c in upper)]
        options.append(opts)
    base = frozenset(forced)
    for _ in range(max_attempts):
        picks = [opts[i - 1] for opts in options for i in [int(rng.integers(len(opts) + 1))] if i]
        Y = base | frozenset(picks)
        if ok(Y):
            return Y
    raise UnsatisfiableInBudget(f"no satisfying capability set found in {max_attempts} attempts")


# ---------------------------------------------------------------------------
# campaign


@dataclass
class Walk:
    steps: list  # (transition, Y)
    score: float
    states: tuple = ()  # base strategy state and tracker states after the walk

    def __len__(self):
        return len(self.steps)


@dataclass
class Campaign:
    model: PlantModel
    goal: Goal
    strategy: Strategy | None = None
    class_kind: str = CAPABILITY_SET
    universe: list | None = None
    walks: int = DEFAULT_WALKS
    walk_len: int = DEFAULT_WALK_LEN
    seed: int = 0
    max_iterations: int | None = None
    budget_secs: float | None = None
    prune: bool | None = None  # defaults to True for the capability-set class
    grace: int = 2

    def __post_init__(self):
        self.class_kind = normalize_kind(self.class_kind)
        if self.strategy is None:
            self.strategy = universal_strategy()
        if self.universe is None:
            self.universe = actuator_universe(self.model)
        if self.prune is None:
            self.prune = self.class_kind == CAPABILITY_SET
        if self.max_iterations is None and self.budget_secs is None:
            raise ValueError("a campaign needs max_iterations or budget_secs")


def plan_walk(campaign: Campaign, current, stack: ExclusionStack, rng: np.random.Generator) -> Walk:
    """Score ``campaign.walks`` random walks on clones and pick one by roulette selection."""
    q, x = current
    model, T = campaign.model, stack.base
    cands = []
    # one derived stream per candidate keeps walks independent of each other
    for wrng in rng.spawn(campaign.walks):
        sim = Simulator(model, q, x)
        r, ts, alpha = T.initial, stack.initial(), {}
        steps = []
        for _ in range(campaign.walk_len):
            outs = T.outgoing(r)
            if not outs:
                break
            tr = outs[int(wrng.integers(len(outs)))]
            if not tr.gamma.evaluate(sim.readings()):
                break
            admit = (lambda Y, ts=ts: stack.step(ts, Y) is not None) if len(stack) else None
            try:
                Y = sample_capability_set(tr.phi, alpha, campaign.universe, wrng, admit=admit)
            except UnsatisfiableInBudget:
                break
            res = fire_on(sim, tr, Y, alpha, campaign.goal.dt)
            if not res:
                break
            alpha = dict(res)
            r, ts = tr.dst, stack.step(ts, Y)
            steps.append((tr, Y))
        if not (T.is_accepting(r) and stack.accepting(ts)):
            continue
        cands.append(Walk(steps, objective_value(campaign.goal.objective, sim.readings()), (r, ts)))
    if not cands:
        raise NoWalksGenerated("no candidate walk ends in an accepting strategy state")
    p = roulette_probabilities([w.score for w in cands])
    return cands[int(rng.choice(len(cands), p=p))]


def roulette_probabilities(scores) -> np.ndarray:
    """Selection probabilities for fitness-proportionate choice over shifted scores."""
    scores = np.asarray(scores, dtype=float)
    fitness = scores - scores.min() + FITNESS_EPS
    return fitness / fitness.sum()


def execute_plan(campaign: Campaign, walk: Walk, live: Simulator, stack: ExclusionStack) -> tuple:
    """Fire the walk on ``live``; returns ``(trace, accepted)``.

    ``accepted`` tells whether the executed history ends in an accepting
    state of the strategy and of every exclusion.
    """
    T = stack.base
    r, ts, alpha = T.initial, stack.initial(), {}
    steps = [(live.q.copy(), live.x.copy(), r)]
    hist = []
    refused = False
    for tr, Y in walk.steps:
        res = fire_on(live, tr, Y, alpha, campaign.goal.dt)
        if not res:
            refused = True
            break
        alpha = dict(res)
        ts2 = stack.step(ts, Y)
        r = tr.dst
        hist.append(Y)
        steps.append((live.q.copy(), live.x.copy(), r))
        if ts2 is None:
            ts = None
            break
        ts = ts2
    ok = live.goal_satisfied(campaign.goal.condition)
    trace = TestTrace(steps, tuple(hist), alpha, campaign.goal.condition, ok, campaign.goal.dt, refused)
    accepted = ts is not None and T.is_accepting(r) and stack.accepting(ts)
    return trace, accepted


@dataclass
class SuiteEntry:
    """One emitted test."""

    index: int
    iteration: int
    trace: TestTrace  # minimized when pruning is on
    original: TestTrace
    records: list
    spec: EquivalenceClassSpec
    probes: int = 0

    @property
    def history(self) -> tuple:
        return self.trace.history

    @property
    def causal_set(self) -> frozenset:
        return cset(self.trace.history)

    @property
    def success_step(self) -> int:
        return len(self.trace.history)


@dataclass
class CampaignResult:
    campaign: Campaign
    entries: list = field(default_factory=list)
    iterations: int = 0
    successes: int = 0
    rejected: int = 0
    failures: int = 0
    superseded: list = field(default_factory=list)
    elapsed: float = 0.0
    violations: list = field(default_factory=list)
    stack: ExclusionStack | None = None

    @property
    def self_check_ok(self) -> bool:
        return not self.violations


def check_suite(entries) -> list:
    """Ordered pairs ``(i, j)``, ``i != j``, with test ``j`` in the class of test ``i``."""
    out = []
    for a in range(len(entries)):
        for b in range(len(entries)):
            if a != b and equivalent(entries[a].spec, entries[a].history, entries[b].history):
                out.append((a, b))
    return out


def run_campaign(campaign: Campaign) -> CampaignResult:
    rng = np.random.default_rng(campaign.seed)
    model, goal = campaign.model, campaign.goal
    stack = ExclusionStack(campaign.strategy)
    res = CampaignResult(campaign)
    executor = SimulatorExecutor(model, campaign.grace)
    t0 = time.perf_counter()
    it = 0
    while True:
        if campaign.max_iterations is not None and it >= campaign.max_iterations:
            break
        if campaign.budget_secs is not None and time.perf_counter() - t0 >= campaign.budget_secs:
            break
        it += 1
        x0 = random_nominal_state(model, rng)
        q0 = make_control_state(model)
        live = Simulator(model, q0, x0)
        try:
            walk = plan_walk(campaign, (q0, x0), stack, rng)
            trace, accepted = execute_plan(campaign, walk, live, stack)
        except (NoWalksGenerated, UnsatisfiableInBudget) as e:
            log.info("iteration %d: %s", it, e)
            res.failures += 1
            continue
        if not trace.successful:
            continue
        res.successes += 1
        if not accepted:
            res.rejected += 1
            continue
        final, records, probes = trace, [], 0
        if campaign.prune:
            pr: PruneResult = prune(ReplaySpec(trace.history, q0, x0, goal.condition, goal.dt), executor)
            final, records, probes = pr.trace, pr.records, pr.probes
        if not cset(final.history) and campaign.class_kind == CAPABILITY_SET:
            log.info("iteration %d: goal reached without capabilities", it)
            continue
        spec = EquivalenceClassSpec(campaign.class_kind, final.history)
        if campaign.class_kind == CAPABILITY_SET:
            # a smaller causal set supersedes earlier tests that contain it;
            # their exclusions stay in place, the new one covers them anyway
            keep = [e for e in res.entries if not spec.Y <= e.causal_set]
            res.superseded.extend(e for e in res.entries if spec.Y <= e.causal_set)
            res.entries = keep
        res.entries.append(SuiteEntry(len(res.entries), it, final, trace, records, spec, probes))
        stack = stack.excluding(spec)
        log.info("iteration %d: test %d, cset %s", it, len(res.entries), format_set(cset(final.history)))
    for i, e in enumerate(res.entries):
        e.index = i
    res.iterations = it
    res.elapsed = time.perf_counter() - t0
    res.violations = check_suite(res.entries)
    res.stack = stack
    return res
