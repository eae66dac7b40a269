"""Suite files and campaign reports (JSON)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .capabilities import from_jsonable_history, to_jsonable_history, to_jsonable_set
from .causal import ReplaySpec
from .conditions import format_sensor_condition, parse_sensor_condition
from .equivalence import CLI_NAMES
from .errors import ModelValidationError
from .plant import ControlState, PhysicalState, PlantModel, make_control_state, observe

SUITE_FORMAT = "causalfuzz-suite/1"
REPORT_FORMAT = "causalfuzz-report/1"


def state_to_json(q: ControlState, x: PhysicalState) -> dict:
    return {"clock": x.clock, "levels": x.tank_levels, "flows": x.pipe_flows, "commands": q.commands}


def state_from_json(model: PlantModel, d) -> tuple:
    try:
        lv = [float(d["levels"][t]) for t in model.tank_ids]
        fl = [float(d["flows"][p]) for p in model.pipe_ids]
        q = make_control_state(model, d.get("commands") or {})
        x = PhysicalState(lv, fl, float(d.get("clock", 0.0)), model.tank_ids, model.pipe_ids)
    except (KeyError, TypeError, ValueError) as e:
        raise ModelValidationError(f"bad origin state: {e!r}") from None
    return q, x


def entry_to_json(model: PlantModel, entry, goal) -> dict:
    t = entry.trace
    q0, x0, _ = entry.original.steps[0]
    return {
        "index": entry.index,
        "iteration": entry.iteration,
        "goal": goal.name,
        "condition": format_sensor_condition(goal.condition),
        "dt": goal.dt,
        "history": to_jsonable_history(t.history),
        "causal_set": to_jsonable_set(entry.causal_set),
        "original_history": to_jsonable_history(entry.original.history),
        "ledger": [r.to_json() for r in entry.records],
        "probes": entry.probes,
        "success_step": entry.success_step,
        "final_readings": observe(model, t.final[1]),
        "origin": state_to_json(q0, x0),
    }


def replay_spec_from_json(model: PlantModel, d) -> ReplaySpec:
    """Rebuild the replay input of a suite entry."""
    if "origin" not in d:
        raise ModelValidationError("suite entry has no recorded origin state")
    for key in ("history", "condition", "dt"):
        if key not in d:
            raise ModelValidationError(f"suite entry lacks {key!r}")
    q0, x0 = state_from_json(model, d["origin"])
    return ReplaySpec(from_jsonable_history(d["history"]), q0, x0,
                      parse_sensor_condition(d["condition"]), float(d["dt"]))


def result_to_json(result) -> dict:
    c = result.campaign
    return {
        "format": SUITE_FORMAT,
        "plant": c.model.name,
        "goal": c.goal.name,
        "class": c.class_kind,
        "seed": c.seed,
        "iterations": result.iterations,
        "successes": result.successes,
        "elapsed": result.elapsed,
        "violations": [list(v) for v in result.violations],
        "entries": [entry_to_json(c.model, e, c.goal) for e in result.entries],
        "superseded": [entry_to_json(c.model, e, c.goal) for e in result.superseded],
    }


def row_from_suite(d: dict) -> dict:
    n = len(d["violations"])
    return {
        "goal": d["goal"],
        "class": d["class"],
        "seed": d["seed"],
        "count": len(d["entries"]),
        "causal_sets": [e["causal_set"] for e in d["entries"]],
        "iterations": d["iterations"],
        "wall_time": round(d["elapsed"], 3),
        "self_check": "ok" if n == 0 else f"{n} equivalent pairs",
    }


def config_digest(config: dict) -> str:
    """sha256 over the canonical JSON form of a campaign configuration."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class SuiteReport:
    seed: int
    config: dict
    rows: list = field(default_factory=list)  # one dict per (goal, class) campaign

    @property
    def digest(self) -> str:
        return config_digest(self.config)

    def add(self, suite: dict) -> None:
        """Add the row of one campaign, given its suite JSON."""
        self.rows.append(row_from_suite(suite))

    def counts(self) -> dict:
        out: dict = {}
        for r in self.rows:
            out.setdefault(r["goal"], {})[r["class"]] = r["count"]
        return out

    def to_json(self) -> dict:
        return {"format": REPORT_FORMAT, "seed": self.seed, "config_digest": self.digest,
                "config": self.config, "counts": self.counts(), "campaigns": self.rows}

    def table(self) -> str:
        lines = [f"{'goal':<14} {'class':<15} {'count':>6} {'wall s':>8}  self-check"]
        for r in self.rows:
            lines.append(f"{r['goal']:<14} {CLI_NAMES.get(r['class'], r['class']):<15} {r['count']:>6} {r['wall_time']:>8.2f}  {r['self_check']}")
        return "\n".join(lines)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")
