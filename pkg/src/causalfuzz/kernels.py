"""Hot loops of the plant simulator.

``simulate`` advances a compiled plant by ``n_ticks`` control intervals:
observe, spoof, run the controller rules, force actuators, integrate the
tank levels.  Two backends compute the same thing: a scalar loop compiled
with numba and a numpy implementation that vectorises the per-tick sensor
and hydraulic updates.  ``CAUSALFUZZ_DISABLE_JIT=1`` selects the latter.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

STATUS_OK = 0
STATUS_RULE_CONFLICT = 1

KIND_LEVEL, KIND_FLOW, KIND_DP = 0, 1, 2


@njit
def _eval_code(ops, sens, cmps, consts, start, length, readings, stack):
    sp = 0
    for j in range(start, start + length):
        op = ops[j]
        if op == 0:
            stack[sp] = True
            sp += 1
        elif op == 1:
            stack[sp] = False
            sp += 1
        elif op == 2:
            v = readings[sens[j]]
            k = consts[j]
            c = cmps[j]
            if c == 0:
                r = v < k
            elif c == 1:
                r = v <= k
            elif c == 2:
                r = v == k
            elif c == 3:
                r = v >= k
            else:
                r = v > k
            stack[sp] = r
            sp += 1
        elif op == 3:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] and stack[sp]
        elif op == 4:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] or stack[sp]
        else:
            stack[sp - 1] = not stack[sp - 1]
    return stack[0]


@njit
def _simulate_jit(levels, flows, cmds, n_ticks, tick, run_controller,
                  tank_area, tank_max,
                  pipe_src, pipe_dst, pipe_nominal, pipe_valve, pipe_pumps, act_on,
                  sens_kind, sens_ref, sens_gain, sens_lo, sens_hi,
                  code_op, code_sens, code_cmp, code_const,
                  rule_start, rule_len, rule_prio, rule_cmd_start, rule_cmd_len, cmd_act, cmd_val,
                  spoof_mask, spoof_val, force_mask, force_val,
                  rec_levels, rec_flows, rec_readings, rec_applied, rec_cmds, rec_clamp, record):
    n_tanks = levels.shape[0]
    n_pipes = flows.shape[0]
    n_sens = sens_kind.shape[0]
    n_act = cmds.shape[0]
    n_rules = rule_start.shape[0]
    readings = np.empty(n_sens)
    applied = np.empty(n_act, dtype=np.int64)
    best_prio = np.empty(n_act, dtype=np.int64)
    best_val = np.empty(n_act, dtype=np.int64)
    conflict = np.zeros(n_act, dtype=np.bool_)
    stack = np.empty(max(code_op.shape[0], 1), dtype=np.bool_)
    dlev = np.empty(n_tanks)
    scale = tick / 3600.0 * 1000.0
    for t in range(n_ticks):
        for s in range(n_sens):
            k = sens_kind[s]
            if k == 0:
                v = levels[sens_ref[s]]
            elif k == 1:
                v = flows[sens_ref[s]]
            else:
                v = sens_gain[s] * flows[sens_ref[s]]
            if v < sens_lo[s]:
                v = sens_lo[s]
            elif v > sens_hi[s]:
                v = sens_hi[s]
            readings[s] = v
        if record:
            for s in range(n_sens):
                rec_readings[t, s] = readings[s]
        if run_controller:
            for s in range(n_sens):
                if spoof_mask[s]:
                    readings[s] = spoof_val[s]
            for a in range(n_act):
                best_prio[a] = -(1 << 62)
                conflict[a] = False
            for r in range(n_rules):
                if _eval_code(code_op, code_sens, code_cmp, code_const,
                              rule_start[r], rule_len[r], readings, stack):
                    p = rule_prio[r]
                    for j in range(rule_cmd_start[r], rule_cmd_start[r] + rule_cmd_len[r]):
                        a = cmd_act[j]
                        if p > best_prio[a]:
                            best_prio[a] = p
                            best_val[a] = cmd_val[j]
                            conflict[a] = False
                        elif p == best_prio[a] and best_val[a] != cmd_val[j]:
                            conflict[a] = True
            for a in range(n_act):
                if conflict[a]:
                    return STATUS_RULE_CONFLICT, a, t
            for a in range(n_act):
                if best_prio[a] != -(1 << 62):
                    cmds[a] = best_val[a]
        for a in range(n_act):
            applied[a] = force_val[a] if force_mask[a] else cmds[a]
        for i in range(n_tanks):
            dlev[i] = 0.0
        for p in range(n_pipes):
            on = True
            v = pipe_valve[p]
            if v >= 0 and applied[v] != act_on[v]:
                on = False
            if on and pipe_pumps[p, 0] >= 0:
                any_pump = False
                for j in range(pipe_pumps.shape[1]):
                    a = pipe_pumps[p, j]
                    if a >= 0 and applied[a] == act_on[a]:
                        any_pump = True
                on = any_pump
            f = pipe_nominal[p] if on else 0.0
            src = pipe_src[p]
            dst = pipe_dst[p]
            if src >= 0 and levels[src] <= 0.0:
                f = 0.0
            if dst >= 0 and levels[dst] >= tank_max[dst]:
                f = 0.0
            flows[p] = f
            if src >= 0:
                dlev[src] -= f
            if dst >= 0:
                dlev[dst] += f
        clamped = False
        for i in range(n_tanks):
            lv = levels[i] + dlev[i] * scale / tank_area[i]
            if lv < 0.0:
                lv = 0.0
                clamped = True
            elif lv > tank_max[i]:
                lv = tank_max[i]
                clamped = True
            levels[i] = lv
        if record:
            for i in range(n_tanks):
                rec_levels[t, i] = levels[i]
            for p in range(n_pipes):
                rec_flows[t, p] = flows[p]
            for a in range(n_act):
                rec_applied[t, a] = applied[a]
                rec_cmds[t, a] = cmds[a]
            rec_clamp[t] = clamped
    return STATUS_OK, -1, -1


def _simulate_numpy(levels, flows, cmds, n_ticks, tick, run_controller,
                    tank_area, tank_max,
                    pipe_src, pipe_dst, pipe_nominal, pipe_valve, pipe_pumps, act_on,
                    sens_kind, sens_ref, sens_gain, sens_lo, sens_hi,
                    code_op, code_sens, code_cmp, code_const,
                    rule_start, rule_len, rule_prio, rule_cmd_start, rule_cmd_len, cmd_act, cmd_val,
                    spoof_mask, spoof_val, force_mask, force_val,
                    rec_levels, rec_flows, rec_readings, rec_applied, rec_cmds, rec_clamp, record):
    n_tanks = levels.shape[0]
    n_act = cmds.shape[0]
    stack = np.empty(max(code_op.shape[0], 1), dtype=np.bool_)
    scale = tick / 3600.0 * 1000.0
    is_level = sens_kind == KIND_LEVEL
    is_flow = sens_kind == KIND_FLOW
    # padded indices so that fancy indexing never goes out of bounds
    lvl_ref = np.where(is_level, sens_ref, 0)
    flw_ref = np.where(is_level, 0, sens_ref)
    gain = np.where(is_flow, 1.0, sens_gain)
    has_valve = pipe_valve >= 0
    valve_idx = np.where(has_valve, pipe_valve, 0)
    pump_valid = pipe_pumps >= 0
    pump_idx = np.where(pump_valid, pipe_pumps, 0)
    has_pump = pump_valid.any(axis=1)
    src_ok = pipe_src >= 0
    dst_ok = pipe_dst >= 0
    src_idx = np.where(src_ok, pipe_src, 0)
    dst_idx = np.where(dst_ok, pipe_dst, 0)
    rule_order = np.argsort(-rule_prio, kind="stable")
    for t in range(n_ticks):
        readings = np.where(is_level, levels[lvl_ref], gain * flows[flw_ref])
        readings = np.clip(readings, sens_lo, sens_hi)
        if record:
            rec_readings[t] = readings
        if run_controller:
            seen = np.where(spoof_mask, spoof_val, readings)
            decided = np.full(n_act, -(1 << 62), dtype=np.int64)
            for r in rule_order:
                if not _eval_code(code_op, code_sens, code_cmp, code_const,
                                  rule_start[r], rule_len[r], seen, stack):
                    continue
                p = rule_prio[r]
                sl = slice(rule_cmd_start[r], rule_cmd_start[r] + rule_cmd_len[r])
                for a, val in zip(cmd_act[sl], cmd_val[sl]):
                    if decided[a] == -(1 << 62):
                        decided[a] = p
                        cmds[a] = val
                    elif decided[a] == p and cmds[a] != val:
                        return STATUS_RULE_CONFLICT, int(a), t
        applied = np.where(force_mask, force_val, cmds)
        enabled = act_on == applied
        on = np.where(has_valve, enabled[valve_idx], True)
        pumps_on = (enabled[pump_idx] & pump_valid).any(axis=1)
        on &= np.where(has_pump, pumps_on, True)
        f = np.where(on, pipe_nominal, 0.0)
        f[src_ok & (levels[src_idx] <= 0.0)] = 0.0
        f[dst_ok & (levels[dst_idx] >= tank_max[dst_idx])] = 0.0
        flows[:] = f
        dlev = np.zeros(n_tanks)
        for p in range(f.shape[0]):
            if src_ok[p]:
                dlev[src_idx[p]] -= f[p]
            if dst_ok[p]:
                dlev[dst_idx[p]] += f[p]
        new = levels + dlev * scale / tank_area
        clamped = bool(((new < 0.0) | (new > tank_max)).any())
        levels[:] = np.clip(new, 0.0, tank_max)
        if record:
            rec_levels[t] = levels
            rec_flows[t] = flows
            rec_applied[t] = applied
            rec_cmds[t] = cmds
            rec_clamp[t] = clamped
    return STATUS_OK, -1, -1


simulate = _simulate_jit if USE_NUMBA else _simulate_numpy
BACKEND = "numba" if USE_NUMBA else "numpy"
