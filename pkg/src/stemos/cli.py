"""Command-line entry point: ``stemos run|suite|metrics|align|replay``."""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import canonical
from .alignment import CameraIntrinsics, MapProjection, solve_map_alignment, solve_pnp, solve_rigid_3d3d
from .errors import InvalidPlanError, StemError
from .geometry import Transform
from .metrics import RunReport, compute_metrics, format_table, records_json
from .orchestrator import BASELINE, FULL, OrchestratorConfig, ablated, read_trace, run_scenario, write_trace
from .planner import RulePlanner
from .sim import FaultPlan, ScenarioTask, World, generate_world, make_team
from .stem import StemStore, read_log, reduce, restore, snapshot, write_log
from .suites import SuiteConfig, Trial, lifelong_trial, robustness_trial, run_suite, scalability_trial
from .worldspec import WorldSpec

KINDS = ("explicit", "lifelong", "robustness", "scalability")


# ---------------------------------------------------------------------------
# scenario files


def load_scenario(path: str | Path) -> dict:
    """Scenario documents are canonical JSON objects.

    ``kind`` selects a generator (``lifelong``, ``robustness``, ``scalability``)
    or ``explicit``, which reads ``tasks`` (and optionally ``world``, ``team``
    and ``faults``) verbatim.
    """
    doc = canonical.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise InvalidPlanError("scenario file must hold an object")
    kind = doc.get("kind", "explicit" if "tasks" in doc else "lifelong")
    if kind not in KINDS:
        raise InvalidPlanError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    return {**doc, "kind": kind}


def save_scenario(doc: dict, path: str | Path) -> None:
    Path(path).write_text(canonical.dumps(doc) + "\n", encoding="utf-8")


def explicit_trial(doc: dict):
    tasks = [ScenarioTask.from_dict(t) for t in doc["tasks"]]
    faults = [FaultPlan.from_dict(f) for f in doc.get("faults", ())]
    team = list(doc.get("team", ("wheeled", "wheeled")))

    def build(seed: int) -> Trial:
        if "world" in doc:
            spec = WorldSpec.from_dict(doc["world"])
        else:
            spec = generate_world(doc.get("domain", "HOUSEHOLD"), doc.get("level", "L1"), doc.get("world_seed", seed))
        world = World(spec, make_team(team, spec), seed, float(doc.get("drift_prob", 0.0)))
        for f in faults:
            world.inject_fault(f)
        return Trial(tasks, world, RulePlanner())
    return build


def trial_builder(doc: dict):
    kind = doc["kind"]
    level = str(doc.get("level", "L1")).upper()
    if kind == "explicit":
        return explicit_trial(doc)
    if kind == "lifelong":
        domains = (doc["domain"],) if "domain" in doc else None
        extra = {"domains": domains} if domains else {}
        return lifelong_trial(level, int(doc.get("sq", 1)), drift_prob=float(doc.get("drift_prob", 0.0)), **extra)
    if kind == "robustness":
        return robustness_trial(str(doc.get("fault", "none")).upper(), doc.get("domain", "HOUSEHOLD"), level)
    return scalability_trial(int(doc.get("robots", 3)), level=level if "level" in doc else "L3")


def _arm(args):
    if args.ablate:
        return f"no-{args.ablate}", ablated(args.ablate)
    return ("memory", FULL) if args.memory == "on" else ("baseline", BASELINE)


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    doc = load_scenario(args.scenario)
    if args.sq is not None:
        doc["sq"] = args.sq
    if args.level is not None:
        doc["level"] = args.level.upper()
    if args.fault is not None:
        doc["fault"] = args.fault.upper()
        if doc["kind"] == "lifelong" and doc["fault"] != "NONE":
            doc["kind"] = "robustness"
    build = trial_builder(doc)
    name, arm = _arm(args)
    reports, traces = [], []
    for i in range(args.trials):
        seed = args.seed + i
        trial = build(seed)
        cfg = OrchestratorConfig(memory=arm, seed=seed, **trial.config)
        orch = run_scenario(trial.world, trial.scenario, cfg, trial.planner)
        rep = RunReport.from_trace(orch.trace)
        rep.config = {**rep.config, "arm": name}
        reports.append(rep)
        traces.extend(orch.trace)
        if args.log and i == 0:
            write_log(orch.store.log, args.log)
            Path(str(args.log) + ".initial").write_bytes(snapshot(orch.store.initial))
    cells = {(name, doc["kind"], doc.get("level", "-")): compute_metrics(reports)}
    print(format_table(cells, "RUN"))
    print(records_json(cells))
    if args.out:
        body = {"cells": canonical.loads(records_json(cells)), "runs": [r.to_dict() for r in reports]}
        Path(args.out).write_text(canonical.dumps(body) + "\n", encoding="utf-8")
    if args.trace:
        write_trace(traces, args.trace)
    return 0


def cmd_suite(args) -> int:
    config = canonical.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    result = run_suite(args.name, SuiteConfig.from_dict(config))
    print(result.table)
    print(records_json(result.cells))
    if args.out:
        Path(args.out).write_text(records_json(result.cells) + "\n", encoding="utf-8")
    return 0


def cmd_metrics(args) -> int:
    records = []
    for path in args.traces:
        records.extend(RunReport.from_trace(read_trace(path)).records)
    cells = {"all": compute_metrics(records)}
    print(format_table(cells, "METRICS"))
    print(records_json(cells))
    return 0


def _pairs(doc: dict):
    if "pairs" in doc:
        return [p[0] for p in doc["pairs"]], [p[1] for p in doc["pairs"]]
    return doc["points"], doc.get("targets", doc.get("pixels"))


def cmd_align(args) -> int:
    doc = canonical.loads(Path(args.correspondences).read_text(encoding="utf-8"))
    X, y = _pairs(doc)
    init = Transform.from_dict(doc["init"]) if "init" in doc else None
    if "intrinsics" in doc:
        K = CameraIntrinsics(**doc["intrinsics"])
        res = solve_pnp(X, y, K, init or Transform())
        mode = "pnp"
    elif np.asarray(y, dtype=float).shape[-1] == 3:
        res = solve_rigid_3d3d(X, y)
        mode = "rigid"
    else:
        proj = doc.get("projection", {})
        res = solve_map_alignment(X, y, MapProjection(float(proj.get("scale", 1.0)),
                                                      tuple(proj.get("offset", (0.0, 0.0)))), init)
        mode = "map"
    R = res.transform.R
    print(f"mode        {mode}")
    for i in range(3):
        print(f"R[{i}]        " + " ".join(f"{v:+.6f}" for v in R[i]))
    print("t           " + " ".join(f"{v:+.6f}" for v in res.transform.t))
    print(f"cost        {res.cost:.6e}")
    print(f"rms         {res.rms:.6e}")
    print(f"iterations  {res.iterations}")
    print(f"converged   {res.converged}")
    print(f"unobservable {','.join(res.unobservable) or '-'}")
    print(canonical.dumps({"mode": mode, "transform": res.transform.to_dict(), "cost": res.cost, "rms": res.rms,
                           "iterations": res.iterations, "converged": res.converged,
                           "unobservable": list(res.unobservable)}))
    return 0


def cmd_replay(args) -> int:
    events = read_log(args.log)
    initial_path = Path(args.initial) if args.initial else Path(str(args.log) + ".initial")
    if not initial_path.exists():
        raise InvalidPlanError(f"no initial snapshot at {initial_path}; pass --initial")
    initial = restore(initial_path.read_bytes())
    first = snapshot(reduce(initial, events))
    store = StemStore(initial)
    for e in events:
        store.append(e.tau, e.spatial_delta, e.embodiment_delta, e.tool_log, e.task_id, e.subtask, e.pre_subtask_queue)
    second = snapshot(store.state)
    third = snapshot(reduce(restore(initial_path.read_bytes()), events))
    digests = [hashlib.sha256(s).hexdigest() for s in (first, second, third)]
    same = len(set(digests)) == 1
    print(f"events      {len(events)}")
    print(f"version     {restore(first).version}")
    print(f"digest      {digests[0]}")
    print(f"deterministic {'yes' if same else 'no'}")
    return 0 if same else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stemos", description="Shared robot memory and orchestration simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--memory", choices=("on", "off"), default="on")
    r.add_argument("--ablate", choices=("spatial", "temporal", "embodiment"))
    r.add_argument("--fault", type=str.lower, choices=("none", "e1", "e2", "e3"))
    r.add_argument("--sq", type=int)
    r.add_argument("--level", type=str.lower, choices=("l1", "l2", "l3"))
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--out", help="report path")
    r.add_argument("--trace", help="write the run trace here")
    r.add_argument("--log", help="write the first trial's event log here")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run an experiment suite")
    s.add_argument("name", type=str.upper, choices=("LIFELONG", "ROBUSTNESS", "SCALABILITY", "ABLATION"))
    s.add_argument("config", nargs="?")
    s.add_argument("--out")
    s.set_defaults(func=cmd_suite)

    m = sub.add_parser("metrics", help="metrics from trace files")
    m.add_argument("traces", nargs="+")
    m.set_defaults(func=cmd_metrics)

    a = sub.add_parser("align", help="solve an alignment from a correspondence file")
    a.add_argument("correspondences")
    a.set_defaults(func=cmd_align)

    rp = sub.add_parser("replay", help="fold an event log and check determinism")
    rp.add_argument("log")
    rp.add_argument("--initial", help="initial snapshot; defaults to <log>.initial")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StemError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
