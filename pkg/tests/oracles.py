"""Independent reference implementations used as test oracles.

These are deliberately naive: dictionaries, plain loops, no shared code
with the package beyond reading the model's fields.
"""
import itertools

from causalfuzz.capabilities import cset


def reference_run(model, levels, commands, n_ticks, schedule):
    """Tick-by-tick closed loop; returns per-tick (readings, commands, applied, levels, flows)."""
    lv = {t.id: float(l) for t, l in zip(model.tanks, levels)}
    fl = {p.id: 0.0 for p in model.pipes}
    area = {t.id: t.area for t in model.tanks}
    mx = {t.id: t.max_level for t in model.tanks}
    cmds = dict(commands)
    out = []
    first = True
    for k in range(n_ticks):
        if first:
            fl = _flows(model, lv, cmds)
            first = False
        s = {}
        for t in model.tanks:
            if t.level_sensor:
                s[t.level_sensor] = lv[t.id]
        for p in model.pipes:
            if p.flow_sensor:
                s[p.flow_sensor] = fl[p.id]
        for d in model.pressure_sensors:
            s[d.id] = d.gain * fl[d.pipe]
        for name, dom in model.sensor_domains.items():
            s[name] = min(max(s[name], dom.lo), dom.hi)
        true_s = dict(s)
        Y = schedule(k)
        seen = dict(s)
        forced = {}
        for y in Y:
            if y.component in model.sensor_domains:
                seen[y.component] = y.value
            else:
                forced[y.component] = y.value
        # highest priority decides each actuator
        prio = {}
        for r in model.controller:
            if r.guard.evaluate(seen):
                for a, v in r.commands.items():
                    v = {True: "on", False: "off"}.get(v, v)
                    if a not in prio or r.priority > prio[a]:
                        prio[a] = r.priority
                        cmds[a] = v
        applied = dict(cmds)
        applied.update(forced)
        fl = _flows(model, lv, applied)
        for p in model.pipes:
            f = fl[p.id] * model.tick / 3600.0 * 1000.0
            if p.src is not None:
                lv[p.src] -= f / area[p.src]
            if p.dst is not None:
                lv[p.dst] += f / area[p.dst]
        for t in lv:
            lv[t] = min(max(lv[t], 0.0), mx[t])
        out.append((true_s, dict(cmds), applied, dict(lv), dict(fl)))
    return out


def _flows(model, lv, conf):
    mx = {t.id: t.max_level for t in model.tanks}
    out = {}
    for p in model.pipes:
        on = True
        if p.valve is not None:
            on = conf[p.valve] == model.actuator_domains[p.valve].enabling
        if p.pumps:
            on = on and any(conf[a] == model.actuator_domains[a].enabling for a in p.pumps)
        f = p.nominal_flow if on else 0.0
        if p.src is not None and lv[p.src] <= 0:
            f = 0.0
        if p.dst is not None and lv[p.dst] >= mx[p.dst]:
            f = 0.0
        out[p.id] = f
    return out


def histories(universe, max_len):
    universe = list(universe)
    for n in range(max_len + 1):
        yield from itertools.product(universe, repeat=n)


def brute_cord(pi):
    out = []
    for y in pi:
        if not out or out[-1] != y:
            out.append(y)
    return tuple(out)


def brute_equivalent(kind, anchor, Y, pi):
    """Class membership from the definitions, written out directly."""
    if kind == "capability_set":
        return tuple(pi) == tuple(anchor) or (Y <= cset(anchor) and Y <= cset(pi))
    if kind == "strong_set":
        return cset(anchor) == cset(pi)
    a, b = brute_cord(anchor), brute_cord(pi)
    n = min(len(a), len(b))
    return a[:n] == b[:n]


def random_strategy(rng, caps, max_states=4):
    """Random strategy with true sensor conditions and simple capability conditions."""
    from causalfuzz.conditions import TRUE, CTrue, conj, exactly, member, not_member
    from causalfuzz.strategy import Strategy, Transition

    n = int(rng.integers(1, max_states + 1))
    states = [f"s{i}" for i in range(n)]
    trs = []
    for a in states:
        for b in states:
            if rng.random() < 0.5:
                continue
            kind = int(rng.integers(5))
            if kind == 0:
                phi = CTrue()
            elif kind == 1:
                k = int(rng.integers(len(caps) + 1))
                phi = exactly(frozenset(rng.choice(caps, size=k, replace=False).tolist()))
            elif kind == 2:
                phi = not_member(caps[int(rng.integers(len(caps)))])
            elif kind == 3:
                phi = member(caps[int(rng.integers(len(caps)))])
            else:
                ys = rng.choice(caps, size=2, replace=False).tolist()
                phi = conj(not_member(ys[0]), not_member(ys[1]))
            trs.append(Transition(a, TRUE, phi, b))
    acc = None
    if rng.random() < 0.3:
        acc = frozenset(s for s in states if rng.random() < 0.6)
    return Strategy(tuple(states), tuple(trs), states[0], accepting=acc)


def powerset(caps):
    caps = list(caps)
    return [frozenset(c for i, c in enumerate(caps) if m >> i & 1) for m in range(1 << len(caps))]
