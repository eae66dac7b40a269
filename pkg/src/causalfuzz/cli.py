"""Command line interface: ``causalfuzz <command> ...``.

Exit status is 0 on success, 1 for invalid input (files, conditions,
arguments) and 2 for runtime budget or size errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .capabilities import (format_history, format_set, from_jsonable_history, to_jsonable_history,
                           to_jsonable_set)
from .causal import SimulatorExecutor, prune
from .conditions import format_sensor_condition, parse_capability_set, parse_history
from .equivalence import (CLI_NAMES, KINDS, EquivalenceClassSpec, compose, enumerate_language, excl, language_contains,
                          normalize_kind, simplify)
from .errors import (BudgetExceeded, CausalFuzzError, NoWalksGenerated, NotReproducibleError, SizeCapExceeded,
                     UnsatisfiableInBudget)
from .fuzz import Campaign, actuator_universe, make_goal, run_campaign
from .miniswat import GOAL_NAMES, data_path, load_miniswat
from .plant import (load_model, make_control_state, make_physical_state, model_from_dict, observe, run_plant)
from .strategy import dump_strategy, load_strategy, loads_strategy, strategy_universe, validate_strategy
from .suite import SuiteReport, replay_spec_from_json, result_to_json, write_json

log = logging.getLogger("causalfuzz")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
RUNTIME_ERRORS = (BudgetExceeded, SizeCapExceeded, UnsatisfiableInBudget, NoWalksGenerated,
                  NotReproducibleError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _load_plant(spec: str | None):
    if spec in (None, "", "miniswat"):
        return load_miniswat()
    return load_model(spec)


def _plant_goal_names(model) -> list:
    if model.name == "miniswat":
        return list(GOAL_NAMES)
    return [f"{s}-{side}" for s in model.sensors for side in ("High", "Low")]


def _names(lets) -> dict:
    out = {}
    for item in lets or []:
        name, sep, text = item.partition("=")
        if not sep:
            raise UsageError(f"--let expects NAME=SET, got {item!r}")
        out[name.strip()] = parse_capability_set(text)
    return out


def derived_seed(seed: int, goal: str) -> int:
    """Per-goal seed: the campaign seed xor a stable hash of the goal name."""
    h = int.from_bytes(hashlib.sha256(goal.encode()).digest()[:4], "big")
    return (int(seed) ^ h) & 0x7FFFFFFF


def _sniff(d) -> str:
    if not isinstance(d, dict):
        return "unknown"
    if "tanks" in d:
        return "plant"
    if "states" in d:
        return "strategy"
    if "goals" in d or "goal" in d:
        return "campaign"
    return "unknown"


# ---------------------------------------------------------------------------
# validate


def _validate_campaign(d, where) -> list:
    out = []
    try:
        model = _load_plant(d.get("plant"))
    except (CausalFuzzError, OSError) as e:
        return [f"{where}plant: {e}"]
    goals = d.get("goals", d.get("goal", []))
    if isinstance(goals, str):
        goals = _plant_goal_names(model) if goals == "all" else [g.strip() for g in goals.split(",")]
    for g in goals:
        try:
            make_goal(model, g)
        except CausalFuzzError as e:
            out.append(f"{where}goal {g!r}: {e}")
    for k in _as_list(d.get("class", d.get("classes", []))):
        try:
            normalize_kind(k)
        except ValueError as e:
            out.append(f"{where}class: {e}")
    if "strategy" in d:
        try:
            T = load_strategy(d["strategy"])
            out += [f"{where}strategy: {v}" for v in validate_strategy(T, model)]
        except (CausalFuzzError, OSError) as e:
            out.append(f"{where}strategy: {e}")
    return out


def _as_list(v):
    if v is None:
        return []
    return [v] if isinstance(v, str) else list(v)


def _bundled_paths() -> list:
    d = data_path("strategies")
    return [data_path("miniswat.yaml")] + sorted((d / n for n in (p.name for p in d.iterdir())
                                                  if n.endswith(".yaml")), key=str)


def cmd_validate(args) -> int:
    model = _load_plant(args.plant) if args.plant else None
    paths = args.paths or _bundled_paths()
    if not args.paths and model is None:
        model = load_miniswat()
    problems = []
    for p in paths:
        where = f"{p}: "
        try:
            text = Path(str(p)).read_text() if not hasattr(p, "read_text") else p.read_text()
            d = yaml.safe_load(text)
        except OSError as e:
            problems.append(f"{where}{e.strerror or e}")
            continue
        except yaml.YAMLError as e:
            problems.append(f"{where}{e}")
            continue
        kind = _sniff(d)
        try:
            if kind == "plant":
                model_from_dict(d)
            elif kind == "strategy":
                T = loads_strategy(text)
                problems += [f"{where}{v}" for v in validate_strategy(T, model)]
            elif kind == "campaign":
                problems += _validate_campaign(d, where)
            else:
                problems.append(f"{where}not a plant, strategy or campaign file")
        except CausalFuzzError as e:
            problems.append(f"{where}{e}")
    for msg in problems:
        print(msg)
    if not problems:
        print(f"{len(paths)} file(s) valid")
    return EXIT_INVALID if problems else EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _injector(model, args):
    if args.inject and args.inject_script:
        raise UsageError("use either --inject or --inject-script")
    if args.inject:
        return parse_capability_set(args.inject)
    if not args.inject_script:
        return None
    segs = yaml.safe_load(Path(args.inject_script).read_text()) or []
    parsed = [(float(s.get("from", 0)), float(s.get("until", float("inf"))), parse_capability_set(s["set"]))
              for s in segs]

    def at(k):
        t = k * model.tick
        out = frozenset()
        for lo, hi, Y in parsed:
            if lo <= t < hi:
                out |= Y
        return out
    return at


def _default_levels(model) -> list:
    """Middle of the operating band, else of each tank's safe range."""
    out = []
    for t in model.tanks:
        if model.operating_band is not None:
            lo, hi = model.operating_band
        elif t.level_sensor:
            d = model.sensor_domains[t.level_sensor]
            lo, hi = d.safe_lo, d.safe_hi
        else:
            lo, hi = 0.0, t.max_level
        out.append((lo + hi) / 2)
    return out


def cmd_simulate(args) -> int:
    if args.horizon <= 0:
        raise UsageError("--horizon must be positive")
    model = _load_plant(args.plant)
    inj = _injector(model, args)
    q0 = make_control_state(model)
    if args.levels:
        lv = [float(v) for v in args.levels.split(",")]
    else:
        lv = _default_levels(model)
    x0 = make_physical_state(model, lv)
    traj = run_plant(model, q0, x0, args.horizon, inj)
    if args.out:
        traj.write_jsonl(args.out)
    final = observe(model, traj.final[1])
    R = np.vstack([traj.readings, np.array([[final[s] for s in model.sensors]])]) if len(traj.readings) \
        else np.array([[final[s] for s in model.sensors]])
    violations = 0
    print(f"{'sensor':<8} {'min':>10} {'max':>10} {'safe range':>18}  first violation")
    for i, s in enumerate(model.sensors):
        d = model.sensor_domains[s]
        col = R[:, i]
        bad = np.nonzero((col < d.safe_lo) | (col > d.safe_hi))[0]
        first = "-"
        if len(bad):
            violations += 1
            k = int(bad[0])
            first = f"t={traj.clock[k]:g}s ({'high' if col[k] > d.safe_hi else 'low'})"
        rng = f"[{d.safe_lo:g}, {d.safe_hi:g}]"
        print(f"{s:<8} {col.min():>10.4g} {col.max():>10.4g} {rng:>18}  {first}")
    print(f"{violations} sensor(s) left their safe range over {args.horizon:g} s")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fuzz


def _fuzz_config(args) -> dict:
    cfg = {}
    if args.config:
        cfg = yaml.safe_load(Path(args.config).read_text()) or {}
        if _sniff(cfg) != "campaign":
            raise UsageError(f"{args.config}: not a campaign file")
        problems = _validate_campaign(cfg, f"{args.config}: ")
        if problems:
            raise UsageError("\n".join(problems))
    pick = {
        "plant": args.plant, "goals": args.goals, "class": args.cls, "seed": args.seed,
        "budget_secs": args.budget_secs, "max_iterations": args.max_iterations, "walks": args.walks,
        "walk_len": args.walk_len, "dt": args.dt, "strategy": args.strategy, "universe": args.universe,
    }
    for k, v in pick.items():
        if v is not None:
            cfg[k] = v
    cfg.setdefault("plant", "miniswat")
    cfg.setdefault("goals", "all")
    cfg.setdefault("class", "causal-set")
    cfg.setdefault("seed", 0)
    cfg.setdefault("walks", 200)
    cfg.setdefault("walk_len", 3)
    if cfg.get("budget_secs") is None and cfg.get("max_iterations") is None:
        cfg["budget_secs"] = 60.0
    return cfg


def _campaign_job(job: dict) -> dict:
    cfg = job["config"]
    model = _load_plant(cfg["plant"])
    goal = make_goal(model, job["goal"], cfg.get("dt"))
    T, universe = None, None
    if cfg.get("strategy"):
        T = load_strategy(cfg["strategy"])
        extra = strategy_universe(yaml.safe_load(Path(cfg["strategy"]).read_text()))
        if extra:
            universe = actuator_universe(model) + extra
    if cfg.get("universe") not in (None, "actuators"):
        universe = sorted(parse_capability_set(cfg["universe"]))
    c = Campaign(model, goal, T, job["class"], universe, int(cfg["walks"]), int(cfg["walk_len"]),
                 job["seed"], cfg.get("max_iterations"), cfg.get("budget_secs"))
    return result_to_json(run_campaign(c))


def cmd_fuzz(args) -> int:
    cfg = _fuzz_config(args)
    model = _load_plant(cfg["plant"])
    goals = cfg["goals"]
    if isinstance(goals, str):
        goals = _plant_goal_names(model) if goals == "all" else [g.strip() for g in goals.split(",") if g.strip()]
    classes = _as_list(cfg["class"])
    classes = list(KINDS) if "all" in classes else [normalize_kind(k) for k in classes]
    for g in goals:
        make_goal(model, g)  # raises on unknown sensors before any work starts
    if cfg.get("strategy"):
        problems = validate_strategy(load_strategy(cfg["strategy"]), model)
        if problems:
            raise UsageError("\n".join(problems))
    jobs = [{"config": cfg, "goal": g, "class": k, "seed": derived_seed(cfg["seed"], g)}
            for g in goals for k in classes]
    n = args.jobs or min(len(jobs), os.cpu_count() or 1)
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            suites = list(ex.map(_campaign_job, jobs))
    else:
        suites = [_campaign_job(j) for j in jobs]
    report = SuiteReport(int(cfg["seed"]), cfg)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for s in suites:
        report.add(s)
        if out:
            write_json(out / f"suite_{s['goal']}_{CLI_NAMES[s['class']]}.json", s)
    if out:
        write_json(out / "report.json", report.to_json())
    print(report.table())
    bad = [r for r in report.rows if r["self_check"] != "ok"]
    return EXIT_RUNTIME if bad else EXIT_OK


# ---------------------------------------------------------------------------
# strategy


def _spec_from_args(args, names) -> EquivalenceClassSpec:
    anchor = parse_history(args.anchor, names)
    Y = parse_capability_set(args.set) if args.set else None
    return EquivalenceClassSpec(args.cls, anchor, Y)


def _emit_strategy(T, out):
    text = dump_strategy(T, out)
    if not out:
        print(text, end="")
    else:
        print(f"wrote {out} ({len(T.states)} states, {len(T.transitions)} transitions)")


def cmd_strategy(args) -> int:
    names = _names(args.let)
    if args.sub == "excl":
        _emit_strategy(excl(_spec_from_args(args, names)), args.out)
    elif args.sub == "compose":
        T = compose(load_strategy(args.left), load_strategy(args.right))
        if args.simplify:
            T = simplify(T)
        _emit_strategy(T, args.out)
    elif args.sub == "enumerate":
        T = load_strategy(args.strategy)
        universe = parse_history(args.universe, names)
        lang = enumerate_language(T, universe, args.max_len, args.budget)
        for pi in sorted(lang, key=lambda p: (len(p), format_history(p))):
            print(format_history(pi) if pi else "ε")
        print(f"# {len(lang)} histories up to length {args.max_len}", file=sys.stderr)
    elif args.sub == "contains":
        T = load_strategy(args.strategy)
        if args.suite:
            d = json.loads(Path(args.suite).read_text())
            pis = [from_jsonable_history(e["history"]) for e in d["entries"]]
        else:
            pis = [parse_history(args.history or "", names)]
        if args.max_len is not None:
            pis = [pi[:args.max_len] for pi in pis]
        answers = [language_contains(T, pi) for pi in pis]
        for pi, a in zip(pis, answers):
            print(f"{'yes' if a else 'no'}  {format_history(pi) if pi else 'ε'}")
        return EXIT_OK if all(answers) else EXIT_INVALID
    return EXIT_OK


# ---------------------------------------------------------------------------
# prune and report


def cmd_prune(args) -> int:
    model = _load_plant(args.plant)
    d = json.loads(Path(args.suite).read_text())
    entries = d.get("entries", [d]) if "entries" in d else [d]
    if not 0 <= args.index < len(entries):
        raise UsageError(f"suite has {len(entries)} entries, index {args.index} is out of range")
    e = entries[args.index]
    spec = replay_spec_from_json(model, e)
    before = spec.history
    pr = prune(spec, SimulatorExecutor(model))
    after = pr.trace.history
    removed = [r for r in pr.records if r.verdict == "pruned"]
    print(f"goal {format_sensor_condition(spec.goal)}, dt {spec.dt:g} s, {pr.probes} replays")
    print(f"history   {format_history(before)}")
    print(f"minimized {format_history(after)}")
    for r in pr.records:
        print(f"  {r.verdict:<7} {r.capability} over steps {r.k}..{r.l}")
    if not removed:
        print("all causal")
    print(f"causal set {format_set(pr.causal_set)}")
    if args.out:
        out = dict(e)
        out.update(history=to_jsonable_history(after), causal_set=to_jsonable_set(pr.causal_set),
                   ledger=[r.to_json() for r in pr.records], probes=pr.probes, success_step=len(after),
                   final_readings=observe(model, pr.trace.final[1]))
        write_json(args.out, {"format": d.get("format", "causalfuzz-suite/1"), "entries": [out]})
    return EXIT_OK


def cmd_report(args) -> int:
    files = []
    for p in args.paths:
        p = Path(p)
        files += sorted(p.glob("suite_*.json")) if p.is_dir() else [p]
    suites = [json.loads(f.read_text()) for f in files]
    suites = [s for s in suites if "entries" in s and "goal" in s]
    seeds = sorted({s["seed"] for s in suites})
    cfg = {"suites": [[s["goal"], s["class"], s["seed"]] for s in suites]}
    report = SuiteReport(seeds[0] if len(seeds) == 1 else -1, cfg)
    for s in suites:
        report.add(s)
    print(report.table())
    if args.out:
        write_json(args.out, report.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="causalfuzz", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check plant, strategy and campaign files")
    v.add_argument("paths", nargs="*", help="files to check (default: the bundled plant and strategies)")
    v.add_argument("--plant", help="plant file or 'miniswat', used to check strategies")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="run the plant and summarize sensor ranges")
    s.add_argument("--plant", default="miniswat")
    s.add_argument("--horizon", type=float, default=86400.0, help="simulated seconds")
    s.add_argument("--inject", help="capability set held for the whole run, e.g. '{[MV101,open]}'")
    s.add_argument("--inject-script", help="YAML list of {from, until, set} segments")
    s.add_argument("--levels", help="comma-separated initial tank levels")
    s.add_argument("--out", help="write the trajectory as JSON lines")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fuzz", help="run fuzzing campaigns")
    f.add_argument("--config", help="campaign YAML file; flags override it")
    f.add_argument("--plant")
    f.add_argument("--goals", help="comma-separated goal names or 'all'")
    f.add_argument("--class", dest="cls", help="causal-set, strong-set, strong-order or all")
    f.add_argument("--seed", type=int)
    f.add_argument("--budget-secs", type=float)
    f.add_argument("--max-iterations", type=int)
    f.add_argument("--walks", type=int)
    f.add_argument("--walk-len", type=int)
    f.add_argument("--dt", type=float, help="seconds per strategy step (default 600 for levels, 15 otherwise)")
    f.add_argument("--strategy", help="initial strategy file (default: universal)")
    f.add_argument("--universe", help="'actuators' or an explicit capability set")
    f.add_argument("--jobs", type=int, help="parallel campaigns (default: one per CPU)")
    f.add_argument("--out", help="directory for suite and report files")
    f.set_defaults(func=cmd_fuzz)

    st = sub.add_parser("strategy", help="build and query strategies")
    ss = st.add_subparsers(dest="sub", required=True, parser_class=_Parser)
    e = ss.add_parser("excl", help="strategy of the histories outside a class")
    e.add_argument("--class", dest="cls", required=True, help="causal-set, strong-set or strong-order")
    e.add_argument("--anchor", required=True, help="anchor history, e.g. 'P P Q'")
    e.add_argument("--set", help="causal set for the causal-set class (default: all of the anchor)")
    e.add_argument("--out")
    c = ss.add_parser("compose", help="parallel composition of two strategies")
    c.add_argument("left")
    c.add_argument("right")
    c.add_argument("--simplify", action="store_true")
    c.add_argument("--out")
    n = ss.add_parser("enumerate", help="list the histories of a strategy")
    n.add_argument("strategy")
    n.add_argument("--universe", required=True, help="space-separated capability sets, e.g. '{} P Q'")
    n.add_argument("--max-len", type=int, default=3)
    n.add_argument("--budget", type=int, default=10 ** 6)
    k = ss.add_parser("contains", help="is a history derivable from a strategy?")
    k.add_argument("strategy")
    k.add_argument("--history", help="space-separated capability sets; empty for ε")
    k.add_argument("--suite", help="check every entry of a suite file instead")
    k.add_argument("--max-len", type=int, help="truncate histories before checking")
    for q in (e, c, n, k):
        q.add_argument("--let", action="append", metavar="NAME=SET", help="name a capability set")
    st.set_defaults(func=cmd_strategy)

    r = sub.add_parser("prune", help="minimize a recorded test to its causal capabilities")
    r.add_argument("suite")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--plant", default="miniswat")
    r.add_argument("--out")
    r.set_defaults(func=cmd_prune)

    rp = sub.add_parser("report", help="summarize suite files")
    rp.add_argument("paths", nargs="+", help="suite files or directories")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"causalfuzz: {e}", file=sys.stderr)
        return EXIT_INVALID
    except RUNTIME_ERRORS as e:
        print(f"causalfuzz: {type(e).__name__}: {e}", file=sys.stderr)
        if isinstance(e, (BudgetExceeded, SizeCapExceeded)):
            print("hint: lower --max-len, shrink the universe or raise --budget", file=sys.stderr)
        return EXIT_RUNTIME
    except (CausalFuzzError, ValueError, OSError, yaml.YAMLError, json.JSONDecodeError) as e:
        print(f"causalfuzz: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
