"""Experiment suites with paired seeds across arms.

Every arm of a suite sees the same worlds, tasks and faults; only the memory
configuration differs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .errors import InvalidPlanError, StemError
from .metrics import MetricsReport, RunReport, TaskRecord, compute_metrics, format_table
from .orchestrator import BASELINE, FULL, MemoryConfig, OrchestratorConfig, ablated, run_scenario
from .planner import RulePlanner
from .sim import (DOMAINS, FaultMode, FaultPlan, HallucinatingPlanner, ScenarioTask, World, fetch_task,
                  generate_world, lifelong_sequence, make_team)

SUITES = ("LIFELONG", "ROBUSTNESS", "SCALABILITY", "ABLATION")


@dataclass(frozen=True)
class SuiteConfig:
    domains: tuple = DOMAINS
    levels: tuple = ("L1", "L2")
    sqs: tuple = (1, 3, 5)
    teams: tuple = (1, 3, 5)
    modes: tuple = ("NONE", "E1", "E2", "E3")
    trials: int = 40
    seed: int = 0
    baseline_persist: bool = True
    drift_prob: float = 0.0
    arms: tuple = ()

    @classmethod
    def from_dict(cls, d: dict) -> SuiteConfig:
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        for k in ("domains", "levels", "sqs", "teams", "modes", "arms"):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)


@dataclass
class Trial:
    scenario: list
    world: World
    planner: object = None
    config: dict = field(default_factory=dict)


@dataclass
class SuiteResult:
    name: str
    cells: dict
    reports: list
    table: str

    def cell(self, *key) -> MetricsReport:
        return self.cells[tuple(key)]


def _seed(*parts) -> int:
    return random.Random(":".join(str(p) for p in parts)).randrange(2 ** 31)


def run_trial(trial_fn, arm: MemoryConfig, seed: int, **overrides) -> RunReport:
    """Build a fresh trial for ``seed`` and run it under ``arm``; scenario errors become failed records."""
    trial = trial_fn(seed)
    cfg = OrchestratorConfig(memory=arm, seed=seed, **{**trial.config, **overrides})
    try:
        orch = run_scenario(trial.world, trial.scenario, cfg, trial.planner)
        return RunReport.from_trace(orch.trace)
    except StemError as exc:
        recs = [TaskRecord(s.task.id, False, 0, s.task.level, s.task.domain, s.task.sequence, s.task.sq_index,
                           s.task.sq_len, exc.code) for s in trial.scenario]
        return RunReport(recs, cfg.to_dict(), seed)


def _tag(report: RunReport, **labels) -> RunReport:
    report.config = {**report.config, **labels}
    return report


# ---------------------------------------------------------------------------
# trial builders


def lifelong_trial(level: str, sq: int, domains=DOMAINS, team=("wheeled", "wheeled"), drift_prob: float = 0.0):
    def build(seed: int) -> Trial:
        rng = random.Random(seed)
        domain = domains[seed % len(domains)]
        spec = generate_world(domain, level, seed)
        world = World(spec, make_team(list(team), spec), seed, drift_prob)
        items = 1 if level == "L1" else 2
        return Trial(lifelong_sequence(spec, rng, f"s{seed}", sq, items), world)
    return build


def robustness_trial(mode: str, domain: str = "HOUSEHOLD", level: str = "L1"):
    def build(seed: int) -> Trial:
        rng = random.Random(f"faults:{seed}")
        spec = generate_world(domain, level, seed)
        world = World(spec, make_team(["wheeled", "wheeled"], spec), seed)
        tasks = []
        for k in range(4):
            tasks.append(fetch_task(spec, rng, f"s{seed}.t{k + 1}", 1, arrival=10 * k, level=level, domain=domain))
        robot = rng.choice(sorted(world.bodies))
        trigger = rng.randint(1, 30)
        planner = RulePlanner()
        if mode == FaultMode.E1:
            transient = rng.random() < 0.5
            world.inject_fault(FaultPlan(FaultMode.E1, trigger, robot, persistence="transient" if transient
                                         else "persistent", duration=rng.randint(20, 60) if transient else 0))
        elif mode == FaultMode.E2:
            world.inject_fault(FaultPlan(FaultMode.E2, trigger, robot, "pick"))
        elif mode == FaultMode.E3:
            target = rng.choice(tasks).task.id
            world.inject_fault(FaultPlan(FaultMode.E3, 0, task=target))
            planner = HallucinatingPlanner(RulePlanner(), [target])
        elif mode != FaultMode.NONE:
            raise InvalidPlanError(f"unknown fault mode {mode}")
        return Trial(tasks, world, planner)
    return build


def scalability_trial(n_robots: int, domains=DOMAINS, level: str = "L3", items: int = 3):
    def build(seed: int) -> Trial:
        rng = random.Random(f"scale:{seed}")
        domain = domains[seed % len(domains)]
        spec = generate_world(domain, level, seed)
        world = World(spec, make_team(["wheeled"] * n_robots, spec), seed)
        return Trial([fetch_task(spec, rng, f"s{seed}.t1", items, level=level, domain=domain)], world)
    return build


# ---------------------------------------------------------------------------
# suites


def _collect(reports, key) -> dict:
    cells: dict = {}
    for rep in reports:
        for r in rep.records:
            cells.setdefault(key(rep.config, r), []).append(r)
    return cells


def _finish(name: str, reports: list, key) -> SuiteResult:
    grouped = _collect(reports, key)
    cells = {k: compute_metrics(v) for k, v in grouped.items()}
    return SuiteResult(name, cells, reports, format_table(cells, name))


def run_lifelong(cfg: SuiteConfig) -> SuiteResult:
    reports = []
    arms = [("memory", FULL, True), ("baseline", BASELINE, cfg.baseline_persist)]
    for level in cfg.levels:
        for sq in cfg.sqs:
            build = lifelong_trial(level, sq, cfg.domains, drift_prob=cfg.drift_prob)
            for trial in range(cfg.trials):
                seed = _seed(cfg.seed, "lifelong", level, sq, trial)
                for name, arm, persist in arms:
                    rep = run_trial(build, arm, seed, persist_world=persist)
                    reports.append(_tag(rep, arm=name, level=level, sq=sq))
    return _finish("LIFELONG", reports, lambda c, r: (c["arm"], c["level"], c["sq"]))


def run_robustness(cfg: SuiteConfig) -> SuiteResult:
    reports = []
    arms = [("memory", FULL), ("baseline", BASELINE)] + [(f"no-{a}", ablated(a)) for a in cfg.arms]
    for mode in cfg.modes:
        build = robustness_trial(mode.upper())
        for trial in range(cfg.trials):
            seed = _seed(cfg.seed, "robust", mode, trial)
            for name, arm in arms:
                reports.append(_tag(run_trial(build, arm, seed), arm=name, mode=mode.upper()))
    return _finish("ROBUSTNESS", reports, lambda c, r: (c["arm"], c["mode"]))


def run_scalability(cfg: SuiteConfig) -> SuiteResult:
    reports = []
    for n in cfg.teams:
        build = scalability_trial(n, cfg.domains)
        for trial in range(cfg.trials):
            seed = _seed(cfg.seed, "scale", trial)
            reports.append(_tag(run_trial(build, FULL, seed), arm="memory", team=f"wheeled x{n}"))
    return _finish("SCALABILITY", reports, lambda c, r: (c["arm"], c["team"]))


def run_ablation(cfg: SuiteConfig) -> SuiteResult:
    reports = []
    arms = [("full", FULL)] + [(f"no-{k}", ablated(k)) for k in ("spatial", "temporal", "embodiment")]
    for level in cfg.levels:
        build = lifelong_trial(level, max(cfg.sqs), cfg.domains, drift_prob=cfg.drift_prob)
        for trial in range(cfg.trials):
            seed = _seed(cfg.seed, "ablation", level, trial)
            for name, arm in arms:
                reports.append(_tag(run_trial(build, arm, seed), arm=name, level=level))
    return _finish("ABLATION", reports, lambda c, r: (c["arm"], c["level"]))


def run_suite(suite: str, config: SuiteConfig | dict | None = None) -> SuiteResult:
    cfg = config if isinstance(config, SuiteConfig) else SuiteConfig.from_dict(config or {})
    name = suite.upper()
    if name == "LIFELONG":
        return run_lifelong(cfg)
    if name == "ROBUSTNESS":
        return run_robustness(cfg)
    if name == "SCALABILITY":
        return run_scalability(replace(cfg, levels=("L3",)))
    if name == "ABLATION":
        return run_ablation(cfg)
    raise InvalidPlanError(f"unknown suite {suite!r}; expected one of {SUITES}")
