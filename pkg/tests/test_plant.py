import copy
import os
import subprocess
import sys

import numpy as np
import pytest

from causalfuzz import kernels
from causalfuzz.capabilities import Capability, capset
from causalfuzz.conditions import parse_sensor_condition
from causalfuzz.errors import (CapabilityDomainError, ModelValidationError, UnknownComponentError,
                               UnknownSensorError)
from causalfuzz.miniswat import _load
from causalfuzz.plant import (ControlRule, Simulator, control_step, dump_model, goal_satisfied, load_model,
                              make_control_state, make_physical_state, model_from_dict, model_to_dict, observe,
                              physics_step, random_nominal_state, run_plant, ticks_for)

from oracles import reference_run

OPEN_MV101 = capset(("MV101", "open"))


def _dict():
    return copy.deepcopy(_load())


# -- model validation ---------------------------------------------------------

@pytest.mark.parametrize("mutate, match", [
    (lambda d: d["tanks"].append(dict(d["tanks"][0])), "duplicate"),
    (lambda d: d["sensors"]["LIT101"].update(safe_lo=2000), "safe_lo"),
    (lambda d: d["pipes"][2].update(valve="P999"), "not a valve"),
    (lambda d: d["pipes"][2].update(to="T999"), "unknown tank"),
    (lambda d: d["pipes"].append({"id": "back", "from": "T301", "to": "T101", "nominal_flow": 1.0}), "cycle"),
    (lambda d: d["actuators"]["MV101"].update(initial="ajar"), "initial"),
])
def test_invalid_models_rejected(mutate, match):
    d = _dict()
    mutate(d)
    with pytest.raises(ModelValidationError, match=match):
        model_from_dict(d)


def test_controller_rule_with_unknown_sensor_rejected():
    d = _dict()
    d["controller"].append({"guard": "LIT999 > 3", "commands": {"P101": "on"}})
    with pytest.raises(ModelValidationError, match="LIT999"):
        model_from_dict(d)


def test_yaml_round_trip(model, tmp_path):
    p = tmp_path / "m.yaml"
    dump_model(model, p)
    m2 = load_model(p)
    assert model_to_dict(m2) == model_to_dict(model)
    q0 = make_control_state(m2)
    x0 = make_physical_state(m2, [500.0, 700.0, 650.0])
    a = run_plant(model, make_control_state(model), x0, 600, OPEN_MV101)
    b = run_plant(m2, q0, x0, 600, OPEN_MV101)
    assert np.array_equal(a.levels, b.levels)


# -- observation and control ------------------------------------------------

def test_observe_nominal(model, nominal):
    s = observe(model, nominal[1])
    assert s["LIT101"] == 600.0
    assert s["FIT101"] == 0.0
    assert s["FIT201"] == 2.0
    assert s["DPIT301"] == pytest.approx(0.4)


def test_control_step_highest_priority_wins(model, nominal):
    q, x = nominal
    s = observe(model, x)
    s["LIT101"] = 1000.0  # above the high setpoint
    _, conf = control_step(model, q, s)
    assert conf["MV101"] == "close"


def test_control_step_equal_priority_conflict(model, nominal):
    m = copy.deepcopy(model)
    g = parse_sensor_condition("true")
    m.controller = [ControlRule(g, {"P101": "on"}, 5), ControlRule(g, {"P101": "off"}, 5)]
    with pytest.raises(ModelValidationError):
        control_step(m, nominal[0], observe(m, nominal[1]))


def test_control_step_missing_reading(model, nominal):
    with pytest.raises(UnknownSensorError):
        control_step(model, nominal[0], {"LIT101": 3.0})


def test_kernel_equal_priority_conflict(model, nominal):
    d = _dict()
    d["controller"] = d["controller"] + [{"guard": "true", "commands": {"P401": "on"}, "priority": 9},
                                         {"guard": "true", "commands": {"P401": "off"}, "priority": 9}]
    m = model_from_dict(d)
    with pytest.raises(ModelValidationError, match="P401"):
        run_plant(m, make_control_state(m), make_physical_state(m, [600.0] * 3), 10)


# -- physics ------------------------------------------------------------------

def test_physics_step_open_valve_fills(model, nominal):
    x = nominal[1]
    conf = dict(model.initial_commands, MV101="open")
    x2 = physics_step(model, x, conf, 3600)
    # net +2.5 m3/h into a 1 m2 tank; once full, inflow stops for a tick while
    # the transfer pump keeps drawing, so the level sits within one tick of the top
    top = model.tanks[0].max_level
    assert top - 2.0 / 3.6 - 1e-9 <= x2.tank_levels["T101"] <= top
    x3 = physics_step(model, x, conf, 60)
    assert x3.tank_levels["T101"] == pytest.approx(600 + 2.5 * 60 / 3600 * 1000)
    assert x3.clock == 60


def test_physics_step_empty_tank_stops_outflow(model):
    x = make_physical_state(model, [0.0, 600.0, 600.0])
    conf = dict(model.initial_commands)
    x2 = physics_step(model, x, conf, 1)
    # supply still runs, so the tank starts filling, but nothing left it on the first tick
    assert x2.tank_levels["T101"] == pytest.approx(2.0 / 3.6)


def test_ticks_for_rejects_fractional(model):
    assert ticks_for(model, 15) == 15
    with pytest.raises(ValueError):
        ticks_for(model, 0)
    with pytest.raises(ValueError):
        ticks_for(model, 1.5)


def test_capability_domain_errors(model, nominal):
    sim = Simulator(model, *nominal)
    with pytest.raises(CapabilityDomainError):
        sim.advance(capset(("MV101", "ajar")), 1)
    with pytest.raises(CapabilityDomainError):
        sim.advance(capset(("LIT101", 5000.0)), 1)
    with pytest.raises(UnknownComponentError):
        sim.advance(capset(("XX1", "on")), 1)


def test_make_physical_state_rejects_out_of_range(model):
    with pytest.raises(ModelValidationError):
        make_physical_state(model, [600.0, 600.0, 5000.0])
    with pytest.raises(ModelValidationError):
        make_physical_state(model, {"T101": 1.0})


def test_random_nominal_state_in_band(model, rng):
    for _ in range(50):
        x = random_nominal_state(model, rng)
        assert ((x.levels >= 400) & (x.levels <= 800)).all()


# -- trajectories against the reference oracle ------------------------------

def _random_schedule(model, rng, n, seg=60):
    caps = [Capability(a, v) for a, d in model.actuator_domains.items() for v in d.values]
    caps += [Capability("LIT101", 1150.0), Capability("LIT301", 100.0), Capability("FIT201", 0.0)]
    segs = []
    for _ in range(n // seg + 1):
        Y = {}
        for c in caps:
            if rng.random() < 0.15:
                Y[c.component] = c
        segs.append(frozenset(Y.values()))
    return lambda k: segs[k // seg]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_run_plant_matches_reference(model, seed):
    rng = np.random.default_rng(seed)
    n = 3000
    sched = _random_schedule(model, rng, n)
    x0 = random_nominal_state(model, rng)
    q0 = make_control_state(model)
    traj = run_plant(model, q0, x0, n, sched)
    ref = reference_run(model, x0.levels, model.initial_commands, n, sched)
    doms = [d.values for d in model.actuator_domains.values()]
    for k, (s, cmds, applied, lv, fl) in enumerate(ref):
        got_s = dict(zip(model.sensors, traj.readings[k]))
        assert got_s == pytest.approx(s, abs=1e-9), k
        got_cmd = {a: doms[i][v] for i, (a, v) in enumerate(zip(model.actuators, traj.commands[k]))}
        assert got_cmd == cmds, k
        got_app = {a: doms[i][v] for i, (a, v) in enumerate(zip(model.actuators, traj.applied[k]))}
        assert got_app == applied, k
        assert traj.levels[k + 1] == pytest.approx([lv[t] for t in model.tank_ids], abs=1e-9), k
        assert traj.flows[k + 1] == pytest.approx([fl[p] for p in model.pipe_ids], abs=1e-12), k


def test_conservation_away_from_clamps(model):
    rng = np.random.default_rng(7)
    n = 5000
    traj = run_plant(model, make_control_state(model), random_nominal_state(model, rng), n,
                     _random_schedule(model, rng, n, seg=200))
    area = np.array([t.area for t in model.tanks])
    src = np.array([p.src is None for p in model.pipes])
    dst = np.array([p.dst is None for p in model.pipes])
    vol = traj.levels / 1000.0 * area
    checked = 0
    for k in range(n):
        if traj.clamped[k]:
            continue
        f = traj.flows[k + 1]
        expected = (f[src].sum() - f[dst].sum()) * model.tick / 3600.0
        assert abs((vol[k + 1] - vol[k]).sum() - expected) < 1e-9
        checked += 1
    assert checked > n // 2


def test_nominal_day_has_no_violations(model, nominal):
    traj = run_plant(model, *nominal, 86400)
    for i, s in enumerate(model.sensors):
        d = model.sensor_domains[s]
        assert (traj.readings[:, i] >= d.safe_lo).all() and (traj.readings[:, i] <= d.safe_hi).all(), s


def test_injector_forms_agree(model, nominal):
    a = run_plant(model, *nominal, 120, OPEN_MV101)
    b = run_plant(model, *nominal, 120, [OPEN_MV101] * 120)
    c = run_plant(model, *nominal, 120, lambda k: OPEN_MV101)
    assert np.array_equal(a.levels, b.levels) and np.array_equal(a.levels, c.levels)
    assert a.injected[0] == OPEN_MV101


def test_trajectory_records_and_states(model, nominal, tmp_path):
    traj = run_plant(model, *nominal, 30, OPEN_MV101)
    assert len(traj) == 31
    q, x = traj.final
    sim = Simulator(model, *nominal).advance(OPEN_MV101, 30)
    assert x == sim.x and q == sim.q
    p = tmp_path / "t.jsonl"
    traj.write_jsonl(p)
    lines = p.read_text().splitlines()
    assert len(lines) == 30
    assert '"MV101": "open"' in lines[0]


def test_simulator_clone_is_independent(model, nominal):
    sim = Simulator(model, *nominal)
    c = sim.clone().advance(OPEN_MV101, 600)
    assert sim.x == nominal[1]
    assert c.x.tank_levels["T101"] > 600
    snap = c.snapshot()
    c.advance(frozenset(), 600)
    c.restore(snap)
    assert c.x == snap[1]


def test_goal_satisfied(model, nominal):
    assert not goal_satisfied(model, parse_sensor_condition("LIT101 > 1100"), nominal[1])
    with pytest.raises(UnknownSensorError):
        goal_satisfied(model, parse_sensor_condition("LIT999 > 1"), nominal[1])


def test_spoofed_reading_drives_controller(model, nominal):
    # controller believes T101 is almost empty and stops the transfer pumps
    sim = Simulator(model, *nominal).advance(capset(("LIT101", 100.0)), 600)
    assert sim.x.tank_levels["T101"] > 600


def test_seeded_determinism(model):
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(99)
        x0 = random_nominal_state(model, rng)
        traj = run_plant(model, make_control_state(model), x0, 2000, _random_schedule(model, rng, 2000))
        runs.append(traj.levels.tobytes() + traj.flows.tobytes() + traj.commands.tobytes())
    assert runs[0] == runs[1]


_BACKEND_SCRIPT = """
import sys, numpy as np
from causalfuzz import kernels
from causalfuzz.capabilities import capset
from causalfuzz.miniswat import load_miniswat
from causalfuzz.plant import make_control_state, random_nominal_state, run_plant
m = load_miniswat()
rng = np.random.default_rng(5)
x0 = random_nominal_state(m, rng)
segs = [capset(("MV101", "open")), capset(("P101", "off"), ("LIT301", 50.0)), frozenset(), capset(("MV302", "close"))]
t = run_plant(m, make_control_state(m), x0, 4000, lambda k: segs[(k // 500) % 4])
sys.stdout.write(kernels.BACKEND + " ")
import hashlib
print(hashlib.sha256(t.levels.tobytes() + t.flows.tobytes() + t.commands.tobytes() + t.readings.tobytes()).hexdigest())
"""


@pytest.mark.slow
def test_numba_and_numpy_backends_agree():
    outs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, CAUSALFUZZ_DISABLE_JIT=flag)
        r = subprocess.run([sys.executable, "-c", _BACKEND_SCRIPT], env=env, capture_output=True, text=True,
                           check=True)
        backend, digest = r.stdout.split()
        outs[backend] = digest
    assert set(outs) == {"numba", "numpy"} or kernels.BACKEND == "numpy"
    assert len(set(outs.values())) == 1
