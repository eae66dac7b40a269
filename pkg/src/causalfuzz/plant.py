"""Deterministic discrete-time model of a small water-treatment plant.

Tanks are connected by pipes.  A pipe carries its nominal flow when its
valve (if any) is open and at least one of its pumps (if any) is on; it is
cut when the source tank is empty or the destination tank is full.  A
rule-based controller reads the sensors once per tick and commands the
actuators.  Capabilities can spoof sensor readings (seen only by the
controller) or force actuator states (seen by the physics).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np
import yaml

from . import kernels
from .capabilities import VALUE_ALIASES, Capability, to_jsonable_set
from .conditions import (SensorCondition, compile_sensor_condition, format_sensor_condition,
                         parse_sensor_condition)
from .errors import (CapabilityDomainError, ModelValidationError, UnknownComponentError,
                     UnknownSensorError)

SOURCE = "source"
DRAIN = "drain"

SENSOR_PREFIXES = ("DPIT", "LIT", "FIT")
ACTUATOR_PREFIXES = ("MV", "P")


def component_kind(name: str) -> str:
    """``valve``, ``pump``, ``level``, ``flow`` or ``pressure`` from the name prefix."""
    for prefix, kind in (("DPIT", "pressure"), ("LIT", "level"), ("FIT", "flow"),
                         ("MV", "valve"), ("P", "pump")):
        if name.startswith(prefix):
            return kind
    raise ModelValidationError(f"{name!r}: unknown component prefix")


def normalize_value(v):
    if isinstance(v, bool):  # YAML 1.1 reads bare on/off as booleans
        return "on" if v else "off"
    if isinstance(v, str):
        return VALUE_ALIASES.get(v, v)
    return v


# ---------------------------------------------------------------------------
# model


@dataclass
class SensorDomain:
    lo: float
    hi: float
    safe_lo: float
    safe_hi: float


@dataclass
class ActuatorDomain:
    values: tuple
    enabling: str

    def index(self, v) -> int:
        return self.values.index(normalize_value(v))


@dataclass
class Tank:
    id: str
    area: float
    max_level: float
    level_sensor: str | None = None


@dataclass
class Pipe:
    id: str
    src: str | None  # None: external source
    dst: str | None  # None: drain
    nominal_flow: float
    valve: str | None = None
    pumps: tuple = ()
    flow_sensor: str | None = None


@dataclass
class PressureSensor:
    id: str
    pipe: str
    gain: float


@dataclass
class ControlRule:
    guard: SensorCondition
    commands: dict
    priority: int = 0


@dataclass
class PlantModel:
    tanks: list
    pipes: list
    sensor_domains: dict
    actuator_domains: dict
    controller: list = field(default_factory=list)
    pressure_sensors: list = field(default_factory=list)
    initial_commands: dict = field(default_factory=dict)
    operating_band: tuple | None = None
    tick: float = 1.0
    name: str = "plant"

    @cached_property
    def tank_ids(self) -> tuple:
        return tuple(t.id for t in self.tanks)

    @cached_property
    def pipe_ids(self) -> tuple:
        return tuple(p.id for p in self.pipes)

    @cached_property
    def sensors(self) -> tuple:
        out = [t.level_sensor for t in self.tanks if t.level_sensor]
        out += [p.flow_sensor for p in self.pipes if p.flow_sensor]
        out += [d.id for d in self.pressure_sensors]
        return tuple(out)

    @cached_property
    def actuators(self) -> tuple:
        return tuple(self.actuator_domains)

    @cached_property
    def sensor_index(self) -> dict:
        return {s: i for i, s in enumerate(self.sensors)}

    @cached_property
    def actuator_index(self) -> dict:
        return {a: i for i, a in enumerate(self.actuators)}

    @property
    def components(self) -> tuple:
        return self.sensors + self.actuators

    def domain_of(self, component: str):
        if component in self.sensor_domains:
            return self.sensor_domains[component]
        if component in self.actuator_domains:
            return self.actuator_domains[component]
        raise UnknownComponentError(f"unknown component {component!r}")

    def validate(self) -> "PlantModel":
        validate_model(self)
        return self

    @cached_property
    def compiled(self) -> "_Compiled":
        return _Compiled(self)


def validate_model(m: PlantModel) -> None:
    """Raise :class:`ModelValidationError` on the first structural problem."""
    names = list(m.tank_ids) + list(m.pipe_ids)
    if len(set(names)) != len(names):
        raise ModelValidationError("duplicate tank or pipe id")
    comps = list(m.sensors) + list(m.actuators)
    seen: set = set()
    for c in comps:
        if c in seen:
            raise ModelValidationError(f"component {c!r} declared more than once")
        seen.add(c)
    for s in m.sensors:
        if not s.startswith(SENSOR_PREFIXES):
            raise ModelValidationError(f"sensor {s!r} must start with LIT, FIT or DPIT")
        if s not in m.sensor_domains:
            raise ModelValidationError(f"sensor {s!r} has no domain")
        d = m.sensor_domains[s]
        if not (d.lo <= d.safe_lo < d.safe_hi <= d.hi):
            raise ModelValidationError(f"sensor {s!r}: need lo <= safe_lo < safe_hi <= hi")
    for s in m.sensor_domains:
        if s not in m.sensor_index:
            raise ModelValidationError(f"domain given for unknown sensor {s!r}")
    for t in m.tanks:
        if t.level_sensor and component_kind(t.level_sensor) != "level":
            raise ModelValidationError(f"tank {t.id}: {t.level_sensor!r} is not a level sensor")
        if t.area <= 0 or t.max_level <= 0:
            raise ModelValidationError(f"tank {t.id}: area and max level must be positive")
    for p in m.pipes:
        if p.flow_sensor and component_kind(p.flow_sensor) != "flow":
            raise ModelValidationError(f"pipe {p.id}: {p.flow_sensor!r} is not a flow sensor")
    for d in m.pressure_sensors:
        if component_kind(d.id) != "pressure":
            raise ModelValidationError(f"{d.id!r} is not a pressure sensor")
        if d.pipe not in m.pipe_ids:
            raise ModelValidationError(f"{d.id}: unknown pipe {d.pipe!r}")

    for a, dom in m.actuator_domains.items():
        if not a.startswith(ACTUATOR_PREFIXES):
            raise ModelValidationError(f"actuator {a!r} must start with MV or P")
        if len(dom.values) < 2 or len(set(dom.values)) != len(dom.values):
            raise ModelValidationError(f"actuator {a!r}: need at least two distinct values")
        if dom.enabling not in dom.values:
            raise ModelValidationError(f"actuator {a!r}: enabling value not in domain")
    used = []
    for p in m.pipes:
        if p.valve:
            if component_kind(p.valve) != "valve":
                raise ModelValidationError(f"pipe {p.id}: {p.valve!r} is not a valve")
            used.append(p.valve)
        for pump in p.pumps:
            if component_kind(pump) != "pump":
                raise ModelValidationError(f"pipe {p.id}: {pump!r} is not a pump")
            used.append(pump)
    for a in used:
        if a not in m.actuator_domains:
            raise ModelValidationError(f"actuator {a!r} has no domain")
    if len(set(used)) != len(used):
        raise ModelValidationError("an actuator is attached to more than one pipe")
    for a in m.actuators:
        if a not in used:
            raise ModelValidationError(f"actuator {a!r} is not attached to any pipe")

    tanks = set(m.tank_ids)
    for p in m.pipes:
        for end in (p.src, p.dst):
            if end is not None and end not in tanks:
                raise ModelValidationError(f"pipe {p.id}: unknown tank {end!r}")
        if p.src is None and p.dst is None:
            raise ModelValidationError(f"pipe {p.id} connects source straight to drain")
        if p.nominal_flow < 0:
            raise ModelValidationError(f"pipe {p.id}: negative nominal flow")
    _check_acyclic(m)

    for i, r in enumerate(m.controller):
        for s in r.guard.sensors():
            if s not in m.sensor_index:
                raise ModelValidationError(f"rule {i}: unknown sensor {s!r}")
        for a, v in r.commands.items():
            if a not in m.actuator_domains:
                raise ModelValidationError(f"rule {i}: unknown actuator {a!r}")
            if normalize_value(v) not in m.actuator_domains[a].values:
                raise ModelValidationError(f"rule {i}: {v!r} not in domain of {a}")
    for a in m.actuators:
        if a not in m.initial_commands:
            raise ModelValidationError(f"actuator {a!r} has no initial command")
        if normalize_value(m.initial_commands[a]) not in m.actuator_domains[a].values:
            raise ModelValidationError(f"initial command of {a!r} not in its domain")
    if m.tick <= 0:
        raise ModelValidationError("tick must be positive")


def _check_acyclic(m: PlantModel) -> None:
    succ: dict = {t: set() for t in m.tank_ids}
    for p in m.pipes:
        if p.src is not None and p.dst is not None:
            succ[p.src].add(p.dst)
    state: dict = {}

    def visit(t):
        state[t] = 1
        for u in succ[t]:
            if state.get(u) == 1:
                raise ModelValidationError(f"pipe graph has a cycle through {u}")
            if u not in state:
                visit(u)
        state[t] = 2

    for t in m.tank_ids:
        if t not in state:
            visit(t)


class _Compiled:
    """Flat arrays handed to the kernels."""

    def __init__(self, m: PlantModel):
        tix = {t: i for i, t in enumerate(m.tank_ids)}
        pix = {p: i for i, p in enumerate(m.pipe_ids)}
        aix = m.actuator_index
        self.tank_area = np.array([t.area for t in m.tanks], dtype=np.float64)
        self.tank_max = np.array([t.max_level for t in m.tanks], dtype=np.float64)
        self.pipe_src = np.array([-1 if p.src is None else tix[p.src] for p in m.pipes], dtype=np.int64)
        self.pipe_dst = np.array([-1 if p.dst is None else tix[p.dst] for p in m.pipes], dtype=np.int64)
        self.pipe_nominal = np.array([p.nominal_flow for p in m.pipes], dtype=np.float64)
        self.pipe_valve = np.array([aix[p.valve] if p.valve else -1 for p in m.pipes], dtype=np.int64)
        width = max([len(p.pumps) for p in m.pipes] + [1])
        pumps = np.full((len(m.pipes), width), -1, dtype=np.int64)
        for i, p in enumerate(m.pipes):
            for j, a in enumerate(p.pumps):
                pumps[i, j] = aix[a]
        self.pipe_pumps = pumps
        self.act_on = np.array([d.index(d.enabling) for d in m.actuator_domains.values()], dtype=np.int64)

        kind, ref, gain = [], [], []
        for t in m.tanks:
            if t.level_sensor:
                kind.append(kernels.KIND_LEVEL); ref.append(tix[t.id]); gain.append(1.0)
        for p in m.pipes:
            if p.flow_sensor:
                kind.append(kernels.KIND_FLOW); ref.append(pix[p.id]); gain.append(1.0)
        for d in m.pressure_sensors:
            kind.append(kernels.KIND_DP); ref.append(pix[d.pipe]); gain.append(d.gain)
        self.sens_kind = np.array(kind, dtype=np.int64)
        self.sens_ref = np.array(ref, dtype=np.int64)
        self.sens_gain = np.array(gain, dtype=np.float64)
        self.sens_lo = np.array([m.sensor_domains[s].lo for s in m.sensors], dtype=np.float64)
        self.sens_hi = np.array([m.sensor_domains[s].hi for s in m.sensors], dtype=np.float64)

        ops, sens, cmps, consts = [], [], [], []
        start, length, prio, cstart, clen, cact, cval = [], [], [], [], [], [], []
        n = 0
        for r in m.controller:
            o, s, c, k = compile_sensor_condition(r.guard, m.sensor_index)
            start.append(n); length.append(len(o)); n += len(o)
            ops.append(o); sens.append(s); cmps.append(c); consts.append(k)
            prio.append(r.priority)
            cstart.append(len(cact)); clen.append(len(r.commands))
            for a, v in r.commands.items():
                cact.append(aix[a]); cval.append(m.actuator_domains[a].index(v))
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)
        self.code_op = cat(ops, np.int64)
        self.code_sens = cat(sens, np.int64)
        self.code_cmp = cat(cmps, np.int64)
        self.code_const = cat(consts, np.float64)
        i64 = lambda xs: np.array(xs, dtype=np.int64)
        self.rule_start, self.rule_len, self.rule_prio = i64(start), i64(length), i64(prio)
        self.rule_cmd_start, self.rule_cmd_len = i64(cstart), i64(clen)
        self.cmd_act, self.cmd_val = i64(cact), i64(cval)
        self.n_sensors = len(m.sensors)
        self.n_actuators = len(m.actuators)


# ---------------------------------------------------------------------------
# states


class PhysicalState:
    """Tank levels (mm), pipe flows (m³/h) and the clock (s)."""

    __slots__ = ("levels", "flows", "clock", "tank_ids", "pipe_ids")

    def __init__(self, levels, flows, clock=0.0, tank_ids=(), pipe_ids=()):
        self.levels = np.asarray(levels, dtype=np.float64)
        self.flows = np.asarray(flows, dtype=np.float64)
        self.clock = float(clock)
        self.tank_ids = tuple(tank_ids)
        self.pipe_ids = tuple(pipe_ids)

    @property
    def tank_levels(self) -> dict:
        return dict(zip(self.tank_ids, self.levels.tolist()))

    @property
    def pipe_flows(self) -> dict:
        return dict(zip(self.pipe_ids, self.flows.tolist()))

    def copy(self) -> "PhysicalState":
        return PhysicalState(self.levels.copy(), self.flows.copy(), self.clock, self.tank_ids, self.pipe_ids)

    def __eq__(self, other):
        return (isinstance(other, PhysicalState) and self.clock == other.clock
                and np.array_equal(self.levels, other.levels) and np.array_equal(self.flows, other.flows))

    def __repr__(self):
        lv = ", ".join(f"{k}={v:.6g}" for k, v in self.tank_levels.items())
        return f"PhysicalState(t={self.clock:g}, {lv})"


class ControlState:
    """Commanded actuator values held by the controller between ticks."""

    __slots__ = ("values", "actuator_ids", "domains")

    def __init__(self, values, actuator_ids, domains):
        self.values = np.asarray(values, dtype=np.int64)
        self.actuator_ids = tuple(actuator_ids)
        self.domains = tuple(domains)

    @property
    def commands(self) -> dict:
        return {a: d[i] for a, d, i in zip(self.actuator_ids, self.domains, self.values.tolist())}

    def copy(self) -> "ControlState":
        return ControlState(self.values.copy(), self.actuator_ids, self.domains)

    def __eq__(self, other):
        return isinstance(other, ControlState) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"ControlState({self.commands})"


def make_control_state(model: PlantModel, commands: Mapping | None = None) -> ControlState:
    cmds = dict(model.initial_commands)
    cmds.update(commands or {})
    vals = []
    for a, dom in model.actuator_domains.items():
        try:
            vals.append(dom.index(cmds[a]))
        except ValueError:
            raise CapabilityDomainError(f"{cmds[a]!r} not in domain of {a}") from None
    return ControlState(vals, model.actuators, [d.values for d in model.actuator_domains.values()])


def pipe_flows(model: PlantModel, levels, configurations: Mapping) -> np.ndarray:
    """Flows implied by actuator states and tank levels (reference version)."""
    tix = {t: i for i, t in enumerate(model.tank_ids)}
    out = np.zeros(len(model.pipes))
    for i, p in enumerate(model.pipes):
        on = True
        if p.valve:
            on = normalize_value(configurations[p.valve]) == model.actuator_domains[p.valve].enabling
        if on and p.pumps:
            on = any(normalize_value(configurations[a]) == model.actuator_domains[a].enabling for a in p.pumps)
        f = p.nominal_flow if on else 0.0
        if p.src is not None and levels[tix[p.src]] <= 0.0:
            f = 0.0
        if p.dst is not None and levels[tix[p.dst]] >= model.tanks[tix[p.dst]].max_level:
            f = 0.0
        out[i] = f
    return out


def make_physical_state(model: PlantModel, levels: Mapping | Sequence, clock: float = 0.0,
                        configurations: Mapping | None = None) -> PhysicalState:
    """State at the given levels with flows consistent with ``configurations``.

    ``configurations`` defaults to the model's initial commands.
    """
    if isinstance(levels, Mapping):
        missing = set(model.tank_ids) - set(levels)
        if missing:
            raise ModelValidationError(f"missing levels for {sorted(missing)}")
        lv = np.array([float(levels[t]) for t in model.tank_ids])
    else:
        lv = np.array(levels, dtype=np.float64)
    mx = model.compiled.tank_max
    if lv.shape != mx.shape or (lv < 0).any() or (lv > mx).any():
        raise ModelValidationError("tank levels must lie within [0, max_level]")
    conf = dict(model.initial_commands)
    conf.update(configurations or {})
    return PhysicalState(lv, pipe_flows(model, lv, conf), clock, model.tank_ids, model.pipe_ids)


def random_nominal_state(model: PlantModel, rng: np.random.Generator) -> PhysicalState:
    """Uniform levels inside the operating band (or the safe range of each level sensor)."""
    lv = []
    for t in model.tanks:
        if model.operating_band is not None:
            lo, hi = model.operating_band
        elif t.level_sensor:
            d = model.sensor_domains[t.level_sensor]
            lo, hi = d.safe_lo, d.safe_hi
        else:
            lo, hi = 0.0, t.max_level
        lv.append(rng.uniform(lo, hi))
    return make_physical_state(model, lv)


# ---------------------------------------------------------------------------
# operations


def observe(model: PlantModel, x: PhysicalState) -> dict:
    """True sensor readings of ``x``."""
    c = model.compiled
    vals = np.empty(c.n_sensors)
    for i in range(c.n_sensors):
        k, r = c.sens_kind[i], c.sens_ref[i]
        v = x.levels[r] if k == kernels.KIND_LEVEL else c.sens_gain[i] * x.flows[r]
        vals[i] = min(max(v, c.sens_lo[i]), c.sens_hi[i])
    return dict(zip(model.sensors, vals.tolist()))


def control_step(model: PlantModel, q: ControlState, s: Mapping) -> tuple:
    """One controller decision; returns ``(q', configurations)``."""
    missing = set(model.sensors) - set(s)
    if missing:
        raise UnknownSensorError(f"readings missing for {sorted(missing)}")
    best: dict = {}
    for r in sorted(model.controller, key=lambda r: -r.priority):
        if not r.guard.evaluate(s):
            continue
        for a, v in r.commands.items():
            v = normalize_value(v)
            if a not in best or r.priority > best[a][0]:
                best[a] = (r.priority, v)
            elif r.priority == best[a][0] and best[a][1] != v:
                raise ModelValidationError(f"rules of equal priority {r.priority} disagree on {a}")
    cmds = q.commands
    for a, (_, v) in best.items():
        cmds[a] = v
    q2 = make_control_state(model, cmds)
    return q2, q2.commands


def _empty_records(n, c, model):
    return (np.zeros((n, len(model.tanks))), np.zeros((n, len(model.pipes))),
            np.zeros((n, c.n_sensors)), np.zeros((n, c.n_actuators), dtype=np.int64),
            np.zeros((n, c.n_actuators), dtype=np.int64), np.zeros(n, dtype=np.bool_))


def _masks(model: PlantModel, Y: Iterable[Capability]):
    c = model.compiled
    spoof_mask = np.zeros(c.n_sensors, dtype=np.bool_)
    spoof_val = np.zeros(c.n_sensors)
    force_mask = np.zeros(c.n_actuators, dtype=np.bool_)
    force_val = np.zeros(c.n_actuators, dtype=np.int64)
    for y in Y:
        if y.component in model.sensor_index:
            d = model.sensor_domains[y.component]
            if not isinstance(y.value, float) or not (d.lo <= y.value <= d.hi):
                raise CapabilityDomainError(f"{y}: value outside [{d.lo:g}, {d.hi:g}]")
            i = model.sensor_index[y.component]
            spoof_mask[i] = True
            spoof_val[i] = y.value
        elif y.component in model.actuator_index:
            d = model.actuator_domains[y.component]
            if y.value not in d.values:
                raise CapabilityDomainError(f"{y}: value not in {list(d.values)}")
            i = model.actuator_index[y.component]
            force_mask[i] = True
            force_val[i] = d.values.index(y.value)
        else:
            raise UnknownComponentError(f"unknown component {y.component!r}")
    return spoof_mask, spoof_val, force_mask, force_val


def check_capabilities(model: PlantModel, Y: Iterable[Capability]) -> None:
    """Raise if any capability names an unknown component or an out-of-domain value."""
    _masks(model, Y)


def _run(model, levels, flows, cmds, n_ticks, masks, run_controller=True, record=None):
    c = model.compiled
    if record is None:
        record = _empty_records(0, c, model)
        rec_flag = False
    else:
        rec_flag = True
    status, a, t = kernels.simulate(
        levels, flows, cmds, n_ticks, float(model.tick), run_controller,
        c.tank_area, c.tank_max,
        c.pipe_src, c.pipe_dst, c.pipe_nominal, c.pipe_valve, c.pipe_pumps, c.act_on,
        c.sens_kind, c.sens_ref, c.sens_gain, c.sens_lo, c.sens_hi,
        c.code_op, c.code_sens, c.code_cmp, c.code_const,
        c.rule_start, c.rule_len, c.rule_prio, c.rule_cmd_start, c.rule_cmd_len, c.cmd_act, c.cmd_val,
        *masks, *record, rec_flag)
    if status == kernels.STATUS_RULE_CONFLICT:
        raise ModelValidationError(
            f"rules of equal priority disagree on {model.actuators[a]} at tick {t}")


def ticks_for(model: PlantModel, dt: float) -> int:
    n = int(round(dt / model.tick))
    if n <= 0 or abs(n * model.tick - dt) > 1e-9 * max(1.0, abs(dt)):
        raise ValueError(f"dt={dt} must be a positive multiple of the tick {model.tick}")
    return n


def physics_step(model: PlantModel, x: PhysicalState, a: Mapping, dt: float) -> PhysicalState:
    """Advance ``x`` by ``dt`` seconds with actuators held at ``a``."""
    n = ticks_for(model, dt)
    q = make_control_state(model, a)
    masks = _masks(model, [])
    masks = (masks[0], masks[1], np.ones(len(model.actuators), dtype=np.bool_), q.values.copy())
    x2 = x.copy()
    _run(model, x2.levels, x2.flows, q.values.copy(), n, masks, run_controller=False)
    x2.clock = x.clock + n * model.tick
    return x2


def goal_satisfied(model: PlantModel, goal: SensorCondition, x: PhysicalState) -> bool:
    unknown = goal.sensors() - set(model.sensors)
    if unknown:
        raise UnknownSensorError(f"unknown sensor(s) {sorted(unknown)}")
    return goal.evaluate(observe(model, x))


# ---------------------------------------------------------------------------
# runs


Injector = Union[None, frozenset, Sequence, Callable[[int], Iterable[Capability]]]


@dataclass
class Trajectory:
    """Per-tick record of a run.

    Row ``k`` of ``readings``/``commands``/``applied``/``injected`` describes
    control interval ``k``; ``levels``/``flows``/``clock`` have one extra
    leading row for the initial state.
    """

    model: PlantModel
    q0: ControlState
    clock: np.ndarray
    levels: np.ndarray
    flows: np.ndarray
    readings: np.ndarray
    commands: np.ndarray
    applied: np.ndarray
    clamped: np.ndarray
    injected: list

    def __len__(self):
        return len(self.clock)

    def state(self, k: int) -> tuple:
        m = self.model
        q = self.q0.copy() if k == 0 else ControlState(self.commands[k - 1].copy(), self.q0.actuator_ids,
                                                         self.q0.domains)
        x = PhysicalState(self.levels[k].copy(), self.flows[k].copy(), self.clock[k], m.tank_ids, m.pipe_ids)
        return q, x

    def __getitem__(self, k):
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        return self.state(k)

    def __iter__(self):
        for k in range(len(self)):
            yield self.state(k)

    @property
    def final(self) -> tuple:
        return self.state(len(self) - 1)

    def iter_records(self):
        """JSON-ready dicts, one per control interval."""
        m = self.model
        doms = [d.values for d in m.actuator_domains.values()]
        for k in range(len(self.clock) - 1):
            yield {
                "clock": float(self.clock[k]),
                "readings": dict(zip(m.sensors, self.readings[k].tolist())),
                "commands": {a: doms[i][v] for i, (a, v) in enumerate(zip(m.actuators, self.commands[k].tolist()))},
                "configurations": {a: doms[i][v] for i, (a, v) in enumerate(zip(m.actuators, self.applied[k].tolist()))},
                "injected": to_jsonable_set(self.injected[k]),
                "levels": dict(zip(m.tank_ids, self.levels[k + 1].tolist())),
                "flows": dict(zip(m.pipe_ids, self.flows[k + 1].tolist())),
                "clamped": bool(self.clamped[k]),
            }

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.iter_records():
                fh.write(json.dumps(rec) + "\n")


def _schedule(injector: Injector, n: int) -> list:
    if injector is None:
        return [frozenset()] * n
    if isinstance(injector, (frozenset, set)):
        return [frozenset(injector)] * n
    if callable(injector):
        return [frozenset(injector(k)) for k in range(n)]
    out = [frozenset(y) for y in list(injector)[:n]]
    return out + [frozenset()] * (n - len(out))


def run_plant(model: PlantModel, q0: ControlState, x0: PhysicalState, horizon: float,
              injector: Injector = None) -> Trajectory:
    """Closed-loop run for ``horizon`` seconds.

    ``injector`` gives the capability set of each control interval: a fixed
    set, a sequence (padded with empty sets), or a function of the interval
    index.
    """
    n = ticks_for(model, horizon)
    sched = _schedule(injector, n)
    c = model.compiled
    rec = _empty_records(n, c, model)
    levels, flows, cmds = x0.levels.copy(), x0.flows.copy(), q0.values.copy()
    k = 0
    while k < n:
        j = k
        while j < n and sched[j] == sched[k]:
            j += 1
        part = tuple(r[k:j] for r in rec)
        _run(model, levels, flows, cmds, j - k, _masks(model, sched[k]), record=part)
        k = j
    rl, rf, rr, ra, rc, rcl = rec
    return Trajectory(
        model=model, q0=q0.copy(),
        clock=x0.clock + model.tick * np.arange(n + 1),
        levels=np.vstack([x0.levels[None, :], rl]),
        flows=np.vstack([x0.flows[None, :], rf]),
        readings=rr, commands=rc, applied=ra, clamped=rcl, injected=sched)


class Simulator:
    """Mutable plant instance: the live system and the prediction model."""

    def __init__(self, model: PlantModel, q: ControlState | None = None, x: PhysicalState | None = None):
        self.model = model
        self.q = q.copy() if q is not None else make_control_state(model)
        if x is None:
            raise ValueError("an initial physical state is required")
        self.x = x.copy()

    def clone(self) -> "Simulator":
        return Simulator(self.model, self.q, self.x)

    def snapshot(self) -> tuple:
        return self.q.copy(), self.x.copy()

    def restore(self, snap: tuple) -> None:
        self.q, self.x = snap[0].copy(), snap[1].copy()

    def readings(self) -> dict:
        return observe(self.model, self.x)

    def goal_satisfied(self, goal: SensorCondition) -> bool:
        return goal_satisfied(self.model, goal, self.x)

    def advance(self, Y: Iterable[Capability], dt: float) -> "Simulator":
        """Hold capability set ``Y`` for ``dt`` seconds of closed-loop operation."""
        n = ticks_for(self.model, dt)
        _run(self.model, self.x.levels, self.x.flows, self.q.values, n, _masks(self.model, Y))
        self.x.clock += n * self.model.tick
        return self


# ---------------------------------------------------------------------------
# YAML


def _pipe_end(v, kind):
    if v is None or v == kind:
        return None
    return str(v)


def model_from_dict(d: Mapping) -> PlantModel:
    try:
        tanks = [Tank(str(t["id"]), float(t["area"]), float(t["max_level"]), t.get("level_sensor"))
                 for t in d["tanks"]]
        pipes = []
        for p in d["pipes"]:
            pumps = p.get("pumps", [p["pump"]] if p.get("pump") else [])
            pipes.append(Pipe(str(p["id"]), _pipe_end(p.get("from"), SOURCE), _pipe_end(p.get("to"), DRAIN),
                              float(p["nominal_flow"]), p.get("valve"), tuple(pumps), p.get("flow_sensor")))
        press = [PressureSensor(str(s["id"]), str(s["pipe"]), float(s["gain"]))
                 for s in d.get("pressure_sensors", [])]
        sdoms = {k: SensorDomain(float(v["lo"]), float(v["hi"]), float(v["safe_lo"]), float(v["safe_hi"]))
                 for k, v in d["sensors"].items()}
        adoms, init = {}, {}
        for k, v in d["actuators"].items():
            kind = component_kind(k)
            values = tuple(normalize_value(x) for x in v.get("values", ("open", "close") if kind == "valve"
                                                           else ("on", "off")))
            enabling = normalize_value(v.get("enabling", values[0]))
            adoms[k] = ActuatorDomain(values, enabling)
            if "initial" in v:
                init[k] = normalize_value(v["initial"])
        rules = []
        for r in d.get("controller", []):
            rules.append(ControlRule(parse_sensor_condition(str(r["guard"])),
                                     {a: normalize_value(v) for a, v in r["commands"].items()},
                                     int(r.get("priority", 0))))
        band = d.get("operating_band")
        m = PlantModel(tanks=tanks, pipes=pipes, sensor_domains=sdoms, actuator_domains=adoms,
                       controller=rules, pressure_sensors=press, initial_commands=init,
                       operating_band=tuple(float(b) for b in band) if band else None,
                       tick=float(d.get("tick", 1.0)), name=str(d.get("name", "plant")))
    except (KeyError, TypeError, AttributeError) as e:
        raise ModelValidationError(f"malformed plant description: {e!r}") from None
    return m.validate()


def model_to_dict(m: PlantModel) -> dict:
    return {
        "name": m.name,
        "tick": m.tick,
        "operating_band": list(m.operating_band) if m.operating_band else None,
        "tanks": [{"id": t.id, "area": t.area, "max_level": t.max_level, "level_sensor": t.level_sensor}
                  for t in m.tanks],
        "pipes": [{"id": p.id, "from": p.src or SOURCE, "to": p.dst or DRAIN, "nominal_flow": p.nominal_flow,
                   "valve": p.valve, "pumps": list(p.pumps), "flow_sensor": p.flow_sensor} for p in m.pipes],
        "pressure_sensors": [{"id": s.id, "pipe": s.pipe, "gain": s.gain} for s in m.pressure_sensors],
        "sensors": {k: {"lo": v.lo, "hi": v.hi, "safe_lo": v.safe_lo, "safe_hi": v.safe_hi}
                    for k, v in m.sensor_domains.items()},
        "actuators": {k: {"values": list(v.values), "enabling": v.enabling, "initial": m.initial_commands.get(k)}
                      for k, v in m.actuator_domains.items()},
        "controller": [{"guard": format_sensor_condition(r.guard), "commands": dict(r.commands),
                        "priority": r.priority} for r in m.controller],
    }


def load_model(path) -> PlantModel:
    with open(path) as fh:
        return model_from_dict(yaml.safe_load(fh))


def dump_model(m: PlantModel, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(model_to_dict(m), fh, sort_keys=False)
