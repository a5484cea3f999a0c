"""Monitor and robotic agents.

A deterministic tick loop owns the world. Each tick it fires faults, lets
drift happen, collects heartbeats, sweeps stale robots, admits arriving tasks,
dispatches ready subtasks layer by layer and then lets every running agent
issue one tool call, in robot-id order. Every outcome is written to the shared
memory through the single event writer and mirrored to a JSONL run trace.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum

from . import canonical
from .embodiment import Availability, EmbodimentDelta, EmbodimentRegistry, RobotProfile
from .errors import HallucinationError, StemError
from .planner import GlobalTask, Planner, PlannerContext, RulePlanner, Subtask, WorkflowGraph, build_context, \
    validate_graph
from .sim import FaultMode, ScenarioTask, World, initial_memory
from .spatial import NodeKind, SceneTree, locate_candidates
from .stem import MemoryState, SpatialDelta, StemStore, ToolCallRecord

TOOL_BUDGET = 40
RETRY_BUDGET = 2
REPLAN_BUDGET = 2
STEP_BUDGET = 120
TASK_TIMEOUT = 200
MAX_RECOVERIES = 4

# error code -> pipeline stage of the failure
STAGES = {
    "subtask-generation": ("HALLUCINATION", "UNKNOWN_LOCATION", "NO_CAPABLE_ROBOT", "UNKNOWN_TEMPLATE",
                           "UNRESOLVED_REFERENCE", "TRANSPORT_FAILURE", "TIMEOUT_PLANNER", "RECOVERY_EXHAUSTED"),
    "tool-invocation": ("TOOL_BROKEN", "CAPABILITY_MISSING", "BUDGET_EXHAUSTED", "STEP_BUDGET", "NO_SPACE",
                        "GRIPPER_FULL", "NOT_HOLDING", "NOT_CO_LOCATED", "CONTAINER_CLOSED", "NOT_OPENABLE"),
    "memory-operation": ("GOAL_MISMATCH", "NOT_FOUND", "DANGLING_REFERENCE", "MALFORMED_DELTA"),
}
UNATTRIBUTED = "UNATTRIBUTED"


def stage_of(code: str | None) -> str | None:
    if code is None:
        return None
    for stage, codes in STAGES.items():
        if code in codes:
            return stage
    return UNATTRIBUTED


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class MemoryConfig:
    """Which memories the planner and agents may read, and whether the monitor recovers.

    ``embodiment`` is ``live`` (heartbeat-driven registry), ``static`` (the
    roster as registered at start, plus busy flags) or ``off``.
    """

    spatial: bool = True
    temporal: bool = True
    embodiment: str = "live"
    recovery: bool = True

    @property
    def name(self) -> str:
        if self == FULL:
            return "memory"
        if self == BASELINE:
            return "baseline"
        off = [k for k, v in (("spatial", self.spatial), ("temporal", self.temporal),
                               ("embodiment", self.embodiment == "live")) if not v]
        return "no-" + "-".join(off) if off else "custom"

    def to_dict(self) -> dict:
        return {"spatial": self.spatial, "temporal": self.temporal, "embodiment": self.embodiment,
                "recovery": self.recovery}

    @classmethod
    def from_dict(cls, d: dict) -> MemoryConfig:
        return cls(bool(d.get("spatial", True)), bool(d.get("temporal", True)), d.get("embodiment", "live"),
                   bool(d.get("recovery", True)))


FULL = MemoryConfig()
BASELINE = MemoryConfig(False, False, "static", False)


def ablated(kind: str) -> MemoryConfig:
    if kind == "spatial":
        return replace(FULL, spatial=False)
    if kind == "temporal":
        return replace(FULL, temporal=False)
    if kind == "embodiment":
        return replace(FULL, embodiment="off")
    raise ValueError(f"unknown memory {kind!r}")


@dataclass(frozen=True)
class OrchestratorConfig:
    memory: MemoryConfig = FULL
    tool_budget: int = TOOL_BUDGET
    retry_budget: int = RETRY_BUDGET
    replan_budget: int = REPLAN_BUDGET
    step_budget: int = STEP_BUDGET
    task_timeout: int = TASK_TIMEOUT
    max_ticks: int = 3000
    persist_world: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return {"memory": self.memory.to_dict(), "tool_budget": self.tool_budget,
                "retry_budget": self.retry_budget, "replan_budget": self.replan_budget,
                "step_budget": self.step_budget, "task_timeout": self.task_timeout, "max_ticks": self.max_ticks,
                "persist_world": self.persist_world, "seed": self.seed}


# ---------------------------------------------------------------------------
# runtime records


class RtState(str, Enum):
    PENDING = "PENDING"
    READY = "READY"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"
    REPLANNED = "REPLANNED"


TERMINAL = (RtState.DONE, RtState.FAILED, RtState.REPLANNED)
_ALLOWED = {
    RtState.PENDING: {RtState.READY, RtState.FAILED, RtState.REPLANNED},
    RtState.READY: {RtState.RUNNING, RtState.FAILED, RtState.REPLANNED},
    RtState.RUNNING: {RtState.DONE, RtState.FAILED},
    RtState.FAILED: {RtState.REPLANNED},
    RtState.DONE: set(),
    RtState.REPLANNED: set(),
}


@dataclass
class RoleState:
    """One robot's progress through its goals inside a subtask."""

    robot: str
    goals: tuple
    index: int = 0
    target: str | None = None
    delivered: list = field(default_factory=list)
    found: list = field(default_factory=list)
    observed: list | None = None
    sweep: list | None = None
    verify: bool = False
    waited: int = 0
    opened: bool = False
    origin: str | None = None
    stash: bool = False
    last: ToolCallRecord | None = None

    @property
    def done(self) -> bool:
        return self.index >= len(self.goals)

    @property
    def goal(self):
        return self.goals[self.index]

    def next_goal(self) -> None:
        self.index += 1
        self.target, self.delivered, self.found, self.observed = None, [], [], None
        self.verify, self.waited, self.opened, self.origin = False, 0, False, None


@dataclass
class SubtaskRuntime:
    subtask: Subtask
    task: str
    generation: int
    budget: int
    state: RtState = RtState.PENDING
    steps: int = 0
    roles: dict = field(default_factory=dict)
    retries: dict = field(default_factory=dict)
    cause: str | None = None
    code: str | None = None
    started: int | None = None
    origin: str | None = None

    @property
    def id(self) -> str:
        return self.subtask.id

    @property
    def depth(self) -> int:
        return self.subtask.depth

    @property
    def robots(self) -> tuple:
        return self.subtask.robots


@dataclass(frozen=True)
class DispatchDecision:
    tick: int
    batch: tuple
    rationale: str

    def to_dict(self) -> dict:
        return {"tick": self.tick, "batch": list(self.batch), "rationale": self.rationale}


@dataclass
class TaskRun:
    scenario: ScenarioTask
    order: int
    status: str = "WAITING"
    runtimes: list = field(default_factory=list)
    generation: int = 0
    replans: int = 0
    recoveries: int = 0
    steps: int = 0
    code: str | None = None
    started: int | None = None
    ended: int | None = None
    replanned: int = 0

    @property
    def task(self) -> GlobalTask:
        return self.scenario.task

    @property
    def live(self) -> list[SubtaskRuntime]:
        return [rt for rt in self.runtimes if rt.state is not RtState.REPLANNED]

    @property
    def terminal(self) -> bool:
        return self.status in ("DONE", "FAILED")


@dataclass(frozen=True)
class Call:
    tool: str
    args: dict


@dataclass(frozen=True)
class Fail:
    code: str
    detail: str = ""


# ---------------------------------------------------------------------------
# orchestrator


class Orchestrator:
    """Monitor for one run: owns the world, the memory writer and the trace."""

    def __init__(self, world: World, planner: Planner | None = None, config: OrchestratorConfig = OrchestratorConfig()):
        self.world = world
        self.planner = planner or RulePlanner()
        self.config = config
        self.mem = config.memory
        state, registrations = initial_memory(world)
        self.store = StemStore(state)
        for d in registrations:
            self.store.append(0, embodiment=d)
        self.static_roster = {r.id: r for r in self.store.state.embodiment.roster()}
        self.map = _skeleton(self.store.state.spatial)
        self.tasks: list[TaskRun] = []
        self.by_task: dict[str, TaskRun] = {}
        self.busy: dict[str, str] = {}
        self.runtimes: dict[str, SubtaskRuntime] = {}
        self.trace: list[dict] = []
        self.decisions: list[DispatchDecision] = []
        self.transitions: list[tuple] = []
        self.rng = random.Random(f"agents:{config.seed}")
        self._emit("run_start", config=config.to_dict(), world=world.spec.domain, level=world.spec.level,
                   robots=sorted(world.bodies))

    # -- helpers

    @property
    def state(self) -> MemoryState:
        return self.store.state

    @property
    def now(self) -> int:
        return self.world.tick

    def _emit(self, kind: str, **fields) -> None:
        self.trace.append({"kind": kind, "tick": self.world.tick, **fields})

    def _set(self, rt: SubtaskRuntime, new: RtState) -> None:
        if new not in _ALLOWED[rt.state]:
            raise StemError(f"illegal transition {rt.state.value} -> {new.value} for {rt.id}")
        self.transitions.append((self.now, rt.id, rt.state.value, new.value))
        rt.state = new

    def _monitor(self, task: str, tool: str, ok: bool, feedback: str, args: dict | None = None,
                 subtask: str | None = None, embodiment: EmbodimentDelta | None = None, pre=()) -> None:
        rec = ToolCallRecord(tool, args or {}, "OK" if ok else "FAIL", feedback or ("ok" if ok else "failed"))
        self.store.append(self.now, embodiment=embodiment, tool_log=(rec,), task_id=task, subtask=subtask, pre=pre)

    def _availability(self, robot: str, value: Availability) -> None:
        reg = self.state.embodiment
        if robot not in reg.robots:
            return
        cur = reg.robots[robot].availability
        # BUSY only from IDLE and IDLE only from BUSY; OFFLINE is owned by the sweep
        if (value is Availability.BUSY and cur is Availability.IDLE) or \
                (value is Availability.IDLE and cur is Availability.BUSY):
            self.store.append(self.now, embodiment=reg.set_availability(robot, value))

    # -- run loop

    def load(self, scenario: list[ScenarioTask]) -> None:
        for i, s in enumerate(scenario):
            run = TaskRun(s, len(self.tasks))
            self.tasks.append(run)
            self.by_task[s.task.id] = run

    def run(self, scenario: list[ScenarioTask] = ()) -> list[dict]:
        self.load(list(scenario))
        while not all(t.terminal for t in self.tasks):
            if self.world.tick >= self.config.max_ticks:
                for t in self.tasks:
                    if not t.terminal:
                        self._fail_task(t, "TIMEOUT")
                break
            self.step()
        self._emit("run_end", tasks=len(self.tasks))
        return self.trace

    def step(self) -> list[DispatchDecision]:
        now = self.world.advance_tick()
        for f in self.world.fire_faults(now):
            self._emit("fault", **f.to_dict())
        moved = self.world.drift()
        if moved:
            self._emit("drift", object=moved[0], source=moved[1], dest=moved[2])
        reg = self.state.embodiment
        for hb in self.world.heartbeats(now, reg.heartbeat_interval):
            self.store.append(now, embodiment=self.state.embodiment.heartbeat(hb, now))
        if self.mem.embodiment == "live":
            for d in self.state.embodiment.sweep_offline(now):
                self.store.append(now, embodiment=d)
                self._robot_lost(d.robot)
        for t in self.tasks:
            if t.status == "WAITING" and self._eligible(t):
                self.submit_task(t)
        decisions = self.step_scheduler(now)
        for robot in sorted(self.busy):
            rt = self.runtimes.get(self.busy.get(robot))
            if rt is not None and rt.state is RtState.RUNNING and robot in rt.roles:
                self.run_agent_step(rt, robot)
        self._check_tasks()
        return decisions

    def _eligible(self, t: TaskRun) -> bool:
        if self.now < t.task.arrival:
            return False
        prev = self.by_task.get(t.task.previous) if t.task.previous else None
        return prev is None or prev.terminal

    # -- planning

    def context(self, task: GlobalTask, generation: int) -> PlannerContext:
        m = self.mem
        ctx = build_context(task, self.state, generation, m.spatial, m.temporal, m.embodiment == "live")
        if m.embodiment == "static":
            roster = []
            for rid, prof in sorted(self.static_roster.items()):
                avail = Availability.BUSY if rid in self.busy else Availability.IDLE
                roster.append(replace(prof, availability=avail).to_dict())
            ctx = replace(ctx, M_r=tuple(roster))
        return ctx

    def _validate(self, graph: WorkflowGraph):
        m = self.mem
        if m.embodiment == "live":
            roster = self.state.embodiment
        elif m.embodiment == "static":
            roster = EmbodimentRegistry(dict(self.static_roster))
        else:
            roster = EmbodimentRegistry()
        return validate_graph(graph, roster, self.state.spatial if m.spatial else None)

    def _plan(self, t: TaskRun) -> WorkflowGraph | None:
        """Plan and validate, replanning on violations; returns None after failing the task."""
        while True:
            ctx = self.context(t.task, t.generation)
            try:
                result = self.planner.plan(ctx)
                violations = self._validate(result.graph)
                if violations:
                    raise HallucinationError(f"{len(violations)} plan violations", violations)
            except HallucinationError as exc:
                text = "; ".join(f"{v.code}: {v.detail}" for v in exc.violations) or str(exc)
                self._monitor(t.task.id, "monitor.plan", False, f"HALLUCINATION: {text}",
                              {"generation": t.generation})
                self._emit("recovery", task=t.task.id, action="replan", cause=FaultMode.E3, detail=text)
                if not self.mem.recovery or t.replans >= self.config.replan_budget:
                    self._fail_task(t, "HALLUCINATION")
                    return None
                t.replans += 1
                t.replanned += 1
                t.generation += 1
                continue
            except StemError as exc:
                self._monitor(t.task.id, "monitor.plan", False, f"{exc.code}: {exc}", {"generation": t.generation})
                self._fail_task(t, exc.code)
                return None
            graph = result.graph
            self._monitor(t.task.id, "monitor.plan", True,
                          canonical.dumps(graph.triples()), {"generation": graph.generation},
                          pre=[s.id for s in graph.subtasks])
            return graph

    def submit_task(self, t: TaskRun) -> str:
        if t.task.previous and not self.config.persist_world:
            self.world.reset()
        t.status = "ACTIVE"
        t.started = self.now
        graph = self._plan(t)
        if graph is not None:
            self._install(t, graph)
        return t.task.id

    def _install(self, t: TaskRun, graph: WorkflowGraph) -> None:
        for s in graph.subtasks:
            rt = SubtaskRuntime(s, t.task.id, graph.generation, self.config.tool_budget)
            t.runtimes.append(rt)
            self.runtimes[rt.id] = rt
            self.transitions.append((self.now, rt.id, None, RtState.PENDING.value))

    # -- scheduling

    def step_scheduler(self, now: int) -> list[DispatchDecision]:
        decisions = []
        for t in sorted((t for t in self.tasks if t.status == "ACTIVE"), key=lambda t: t.order):
            live = t.live
            open_depths = [rt.depth for rt in live if rt.state is not RtState.DONE]
            if not open_depths:
                continue
            d = min(open_depths)
            batch = []
            for rt in sorted((rt for rt in live if rt.depth == d), key=lambda rt: rt.id):
                if rt.state is RtState.PENDING:
                    self._set(rt, RtState.READY)
                if rt.state is not RtState.READY:
                    continue
                if self.mem.embodiment == "live":
                    lost = [r for r in rt.robots if self._offline(r)]
                    if lost:
                        self.handle_failure(FaultMode.E1, rt, "ROBOT_OFFLINE", lost)
                        continue
                if any(r in self.busy or r not in self.world.bodies for r in rt.robots):
                    continue
                self._dispatch(rt)
                batch.append(rt.id)
            if t.status != "ACTIVE":
                continue
            if batch:
                why = f"{t.task.id} depth {d}: robots {sorted({r for b in batch for r in self.runtimes[b].robots})} free"
                dec = DispatchDecision(now, tuple(batch), why)
                decisions.append(dec)
                self.decisions.append(dec)
                self._emit("dispatch", task=t.task.id, depth=d, batch=list(batch),
                           robots={b: list(self.runtimes[b].robots) for b in batch})
        return decisions

    def _offline(self, robot: str) -> bool:
        reg = self.state.embodiment
        return robot in reg.robots and reg.robots[robot].availability is Availability.OFFLINE

    def _dispatch(self, rt: SubtaskRuntime) -> None:
        self._set(rt, RtState.RUNNING)
        rt.started = self.now
        for r in rt.robots:
            self.busy[r] = rt.id
            self._availability(r, Availability.BUSY)
            rt.roles[r] = RoleState(r, tuple(rt.subtask.roles.get(r, ())))

    def barrier_collab(self, rt: SubtaskRuntime) -> bool:
        """Gate for a collaboration subtask: every member free and reachable at once."""
        return all(r not in self.busy and not self._offline(r) for r in rt.robots)

    def _release(self, rt: SubtaskRuntime) -> None:
        for r in rt.robots:
            if self.busy.get(r) == rt.id:
                del self.busy[r]
                self._availability(r, Availability.IDLE)

    # -- agents

    def run_agent_step(self, rt: SubtaskRuntime, robot: str) -> ToolCallRecord | None:
        body = self.world.bodies[robot]
        if body.offline(self.now):
            return None
        role = rt.roles[robot]
        action = None
        for _ in range(2 * len(role.goals) + 2):
            if role.done:
                break
            action = self._decide(rt, role)
            if action is None:
                role.next_goal()
                continue
            break
        if role.done:
            self._role_finished(rt)
            return None
        t = self.by_task[rt.task]
        if isinstance(action, Fail):
            self._subtask_failed(rt, action.code, action.detail, robot)
            return None
        if rt.budget <= 0:
            self._subtask_failed(rt, "BUDGET_EXHAUSTED", f"{rt.id} used its {self.config.tool_budget} calls", robot)
            return None
        at = body.loc
        outcome = self.world.invoke_tool(robot, action.tool, action.args)
        rec = ToolCallRecord(action.tool, {**action.args, "at": at}, outcome.status, outcome.feedback, robot)
        self._record(rt, robot, rec, outcome)
        rt.budget -= 1
        rt.steps += 1
        t.steps += 1
        role.last = rec
        self._emit("tool", task=rt.task, subtask=rt.id, robot=robot, tool=rec.tool, args=rec.args,
                   status=rec.status.value, feedback=rec.feedback)
        self._observe(rt, role, rec, outcome)
        if t.steps > self.config.step_budget and not t.terminal:
            self._fail_task(t, "STEP_BUDGET")
        return rec

    def _role_finished(self, rt: SubtaskRuntime) -> None:
        if rt.state is RtState.RUNNING and all(r.done for r in rt.roles.values()):
            self._set(rt, RtState.DONE)
            self._release(rt)

    def _record(self, rt: SubtaskRuntime, robot: str, rec: ToolCallRecord, outcome) -> None:
        """Translate a world outcome into memory events; the first event carries the tool record."""
        st = self.state
        pending_spatial = []
        for d in outcome.spatial:
            obj = d.target
            where = st.spatial.find_object(obj)
            if d.variant.value == "REMOVE" and where is None:
                continue
            if d.variant.value == "SET_STATE":
                if where is None or all(st.spatial.object(obj).state.get(k) == v
                                        for k, v in d.payload["state"].items()):
                    continue
            if d.variant.value == "ADD" and where is not None:
                pending_spatial.append(SpatialDelta.remove(obj))
            pending_spatial.append(d)
        emb = []
        for rid, changes in sorted(outcome.embodiment.items(), key=lambda kv: (kv[0] != robot, kv[0])):
            if rid in st.embodiment.robots:
                emb.append(EmbodimentDelta(rid, frozenset(changes), dict(changes)))
        # removals for stale copies go first, then the record with the main deltas
        while len(pending_spatial) > 1:
            self.store.append(self.now, spatial=pending_spatial.pop(0), task_id=rt.task, subtask=rt.id)
        self.store.append(self.now, spatial=pending_spatial[0] if pending_spatial else None,
                          embodiment=emb[0] if emb else None, tool_log=(rec,), task_id=rt.task, subtask=rt.id)
        for d in emb[1:]:
            self.store.append(self.now, embodiment=d, task_id=rt.task, subtask=rt.id)
        if outcome.observation is not None:
            self._reconcile(rt, *outcome.observation)

    def _reconcile(self, rt: SubtaskRuntime, carrier: str, seen) -> None:
        """Make memory of ``carrier`` match what was just observed."""
        seen_ids = {o.id for o in seen}
        for o in seen:
            st = self.state
            for r in st.embodiment.roster():
                if r.holding == o.id:
                    self.store.append(self.now, embodiment=EmbodimentDelta(r.id, frozenset({"holding"}),
                                                                           {"holding": None}),
                                      task_id=rt.task, subtask=rt.id)
            where = self.state.spatial.find_object(o.id)
            if where is not None:
                if where == carrier and self.state.spatial.object(o.id) == o:
                    continue
                self.store.append(self.now, spatial=SpatialDelta.remove(o.id), task_id=rt.task, subtask=rt.id)
            self.store.append(self.now, spatial=SpatialDelta.add(carrier, o), task_id=rt.task, subtask=rt.id)
        for oid in sorted(set(self.state.spatial.node(carrier).graph.nodes) - seen_ids):
            self.store.append(self.now, spatial=SpatialDelta.remove(oid), task_id=rt.task, subtask=rt.id)

    # -- policy

    def _history(self, rt: SubtaskRuntime, role: RoleState) -> list[ToolCallRecord]:
        if not self.mem.temporal:
            return [role.last] if role.last is not None else []
        return [rec for e in self.store.task_events(rt.task) for rec in e.tool_log if rec.robot is not None]

    def _excluded(self, rt: SubtaskRuntime, role: RoleState, category: str | None) -> set:
        out = set()
        for rec in self._history(rt, role):
            if rec.tool == "detect" and not rec.ok and rec.args.get("category") in (category, None):
                out.add(rec.args.get("at"))
        return out

    def _candidates(self, rt: SubtaskRuntime, role: RoleState, category: str | None, loc: str) -> list[str]:
        excluded = self._excluded(rt, role, category)
        if self.mem.spatial:
            tree = self.state.spatial
            first = locate_candidates(tree, category) if category else []
            rest = sorted((c.id for c in tree.carriers() if c.id not in first),
                          key=lambda c: (_hops(tree, loc, c), c))
            return [c for c in first + rest if c not in excluded]
        if role.sweep is None:
            role.sweep = sorted(c.id for c in self.map.carriers())
            random.Random(f"sweep:{self.config.seed}:{rt.id}:{role.robot}").shuffle(role.sweep)
        return [c for c in role.sweep if c not in excluded]

    def _holder(self, obj: str) -> RobotProfile | None:
        for r in self.state.embodiment.roster():
            if r.holding == obj:
                return r
        return None

    def _satisfied(self, goal, target: str | None) -> bool:
        """Goal postcondition as spatial memory sees it."""
        if not self.mem.spatial:
            return False
        tree = self.state.spatial
        if goal.kind == "insert":
            if target is None or tree.find_object(target) != goal.dest or goal.container is None:
                return False
            rels = tree.node(goal.dest).graph.relations(target, goal.container)
            return any(r.value == "IN" for r in rels)
        if goal.kind == "fetch":
            if target is not None:
                return tree.find_object(target) == goal.dest
            if goal.category and goal.dest in tree.nodes and goal.ref is None:
                return any(o.category == goal.category for o in tree.node(goal.dest).graph.nodes.values())
        return False

    def _decide(self, rt: SubtaskRuntime, role: RoleState):
        """Next tool call for this role; None when the current goal is met."""
        g = role.goal
        body = self.world.bodies[role.robot]
        loc, holding = body.loc, body.holding
        if g.kind == "wait":
            return None if role.waited >= g.count else Call("wait", {})
        if g.kind == "open":
            if role.opened:
                return None
            if self.mem.spatial and g.obj in self.state.spatial.object_index and \
                    self.state.spatial.object(g.obj).state.get("open"):
                return None
            where = g.dest
            if self.mem.spatial and self.state.spatial.find_object(g.obj):
                where = self.state.spatial.find_object(g.obj)
            if loc != where:
                return Call("navigate", {"target": where})
            return Call("open", {"object": g.obj})
        # fetch / insert
        if len(role.delivered) >= g.count:
            return None
        target = role.target or g.obj
        if holding is not None:
            held = self.world.held.get(holding)
            fits = g.ref is not None or (g.category is not None and held is not None and held.category == g.category)
            if target is None and fits:
                role.target = target = holding
            if holding == target:
                if loc != g.dest:
                    return Call("navigate", {"target": g.dest})
                args = {"target": g.dest, "object": holding}
                if g.kind == "insert":
                    args["inside"] = g.container
                return Call("place", args)
            # an unrelated leftover in the gripper is set down on the nearest carrier first
            role.stash = True
            if loc in self.map.nodes and self.map.nodes[loc].kind is NodeKind.CARRIER:
                return Call("place", {"target": loc, "object": holding})
            spot = min(self.map.carriers(), key=lambda c: (_hops(self.map, loc, c.id), c.id)).id
            return Call("navigate", {"target": spot})
        if g.ref is None and self._satisfied(g, target):
            return None
        if self.mem.spatial and target is not None and not role.verify:
            tree = self.state.spatial
            where = tree.find_object(target)
            if where is not None:
                if loc != where:
                    return Call("navigate", {"target": where})
                return Call("pick", {"object": target})
            holder = self._holder(target)
            if holder is not None and holder.id != role.robot:
                if holder.availability is Availability.OFFLINE:
                    return Fail("OBJECT_UNREACHABLE", f"{target} is held by offline {holder.id}")
                return Call("wait", {})
        if role.verify:
            if loc in self.map.nodes and self.map.nodes[loc].kind is NodeKind.CARRIER:
                return Call("detect", {"category": None})
            role.verify = False
        if g.ref is not None and target is None:
            if role.observed is not None:
                pool = [o for o in role.observed if o not in role.delivered]
                if not pool:
                    return Fail("UNRESOLVED_REFERENCE", f"nothing here could be '{g.ref}'")
                role.target = self.rng.choice(sorted(pool))
                role.observed = None
                return Call("pick", {"object": role.target})
            if role.origin is not None and loc != role.origin:
                return Call("navigate", {"target": role.origin})
            if loc in self.map.nodes and self.map.nodes[loc].kind is NodeKind.CARRIER:
                return Call("detect", {"category": None})
            return Fail("UNRESOLVED_REFERENCE", f"'{g.ref}' does not name anything {role.robot} can perceive")
        if role.found:
            role.target = role.found[0]
            role.found = []
            return Call("pick", {"object": role.target})
        category = g.category
        if category is None and target is not None and self.mem.spatial:
            category = _category_hint(self.state.spatial, target)
        if category is None and target is not None:
            category = target.rsplit("_", 1)[0]
        cands = self._candidates(rt, role, category, loc)
        if not cands:
            return Fail("NOT_FOUND", f"no {category} anywhere {role.robot} looked")
        if g.source and g.source in cands:
            cands.remove(g.source)
            cands.insert(0, g.source)
        if loc == cands[0]:
            return Call("detect", {"category": category})
        return Call("navigate", {"target": cands[0]})

    def _observe(self, rt: SubtaskRuntime, role: RoleState, rec: ToolCallRecord, outcome) -> None:
        g = role.goal if not role.done else None
        code = rec.feedback.split(":", 1)[0] if not rec.ok else None
        if rec.ok:
            rt.retries.pop((role.robot, rec.tool), None)
        if rec.tool == "wait" and g is not None and g.kind == "wait":
            role.waited += 1
            if role.waited >= g.count:
                role.next_goal()
                if role.done:
                    self._role_finished(rt)
            return
        if rec.tool == "detect":
            if role.verify:
                role.verify = False
                if role.target and role.target not in {o.id for o in outcome.observation[1]}:
                    role.target = None if g is None or g.obj is None or not self.mem.spatial else role.target
            if outcome.observation is not None:
                seen = outcome.observation[1]
                if g is not None and g.ref is not None and rec.args.get("category") is None:
                    role.observed = [o.id for o in seen]
                    role.origin = role.origin or outcome.observation[0]
                elif rec.ok and rec.args.get("category"):
                    role.found = [o.id for o in seen if o.category == rec.args["category"]]
            if not rec.ok and rec.args.get("category") and role.sweep and rec.args.get("at") in role.sweep:
                role.sweep.remove(rec.args["at"])
                role.sweep.append(rec.args["at"])
            return
        if rec.tool == "pick" and not rec.ok and code == "NOT_FOUND":
            # memory was stale: look again and let the observation correct it
            role.verify = True
            if not self.mem.spatial:
                role.target = None
            return
        if rec.tool == "open" and rec.ok:
            role.opened = True
            return
        if rec.tool == "place" and rec.ok and role.stash:
            role.stash = False
            return
        if rec.tool == "place" and rec.ok and g is not None:
            role.delivered.append(rec.args["object"])
            role.target = None
            if len(role.delivered) >= g.count:
                role.next_goal()
                if role.done:
                    self._role_finished(rt)
            return
        if not rec.ok and code not in ("NOT_FOUND",):
            key = (role.robot, rec.tool)
            rt.retries[key] = rt.retries.get(key, 0) + 1
            if rt.retries[key] > self.config.retry_budget:
                cause = FaultMode.E2 if code == "TOOL_BROKEN" else None
                self._subtask_failed(rt, code, rec.feedback, role.robot, cause, rec.tool)

    # -- failures

    def _subtask_failed(self, rt: SubtaskRuntime, code: str, detail: str, robot: str | None = None,
                        cause: str | None = None, tool: str | None = None) -> None:
        if rt.state is not RtState.RUNNING:
            return
        rt.code = code
        self._set(rt, RtState.FAILED)
        self._release(rt)
        self._emit("subtask_failed", task=rt.task, subtask=rt.id, robot=robot, code=code, detail=detail)
        self.handle_failure(cause, rt, code, [robot] if robot else [], tool)

    def _robot_lost(self, robot: str) -> None:
        for rt in list(self.runtimes.values()):
            if robot in rt.robots and rt.state is RtState.RUNNING:
                rt.code = "ROBOT_OFFLINE"
                self._set(rt, RtState.FAILED)
                self._release(rt)
                self.handle_failure(FaultMode.E1, rt, "ROBOT_OFFLINE", [robot])

    def handle_failure(self, cause: str | None, rt: SubtaskRuntime, code: str, robots=(), tool: str | None = None):
        """Recovery for a failed (or unassignable) subtask: reassign, else replan, else fail the task."""
        t = self.by_task[rt.task]
        if t.terminal:
            return None
        if not self.mem.recovery:
            if rt.state is not RtState.FAILED:
                self._set(rt, RtState.FAILED)
            self._fail_task(t, code)
            return None
        if t.recoveries >= MAX_RECOVERIES:
            if rt.state is not RtState.FAILED:
                self._set(rt, RtState.FAILED)
            self._fail_task(t, "RECOVERY_EXHAUSTED" if code in ("ROBOT_OFFLINE",) else code)
            return None
        t.recoveries += 1
        if rt.state in (RtState.PENDING, RtState.READY):
            self._set(rt, RtState.FAILED)
        action = None
        if cause == FaultMode.E2 and tool and self.mem.embodiment == "live":
            for r in robots:
                if tool in self.state.embodiment.robots[r].capabilities:
                    d = self.state.embodiment.hotplug_tool(r, tool, attach=False)
                    self._monitor(rt.task, "monitor.recover", True, f"detached broken {tool} from {r}",
                                  {"action": "detach", "robot": r, "tool": tool}, rt.id, embodiment=d)
        if cause in (FaultMode.E1, FaultMode.E2) and self.mem.embodiment == "live":
            action = self._reassign(rt, robots)
        if action is None and code not in ("OBJECT_UNREACHABLE",):
            action = self._replan(t, rt)
        if action is None:
            self._fail_task(t, code if code != "ROBOT_OFFLINE" else "RECOVERY_EXHAUSTED")
        return action

    def _reassign(self, rt: SubtaskRuntime, lost) -> str | None:
        reg = self.state.embodiment
        tree = self.state.spatial if self.mem.spatial else None
        used = set(rt.robots)
        mapping = {}
        for r in lost:
            if r not in rt.robots:
                continue
            tools = sorted(rt.subtask.tools_for(r))
            goal = rt.subtask.roles[r][0] if rt.subtask.roles.get(r) else None
            near = goal.obj and tree and tree.find_object(goal.obj) or (goal.dest if goal else None)
            pick = None
            for include_busy in (False, True):
                for cand in reg.find_capable(tools[0], near, tree, include_busy, exclude=used | set(lost)):
                    if set(tools) <= reg.robots[cand].capabilities:
                        pick = cand
                        break
                if pick:
                    break
            if pick is None:
                return None
            mapping[r] = pick
            used.add(pick)
        if not mapping:
            return None
        robots = tuple(mapping.get(r, r) for r in rt.robots)
        roles = {mapping.get(r, r): gs for r, gs in rt.subtask.roles.items()}
        n = sum(1 for x in self.runtimes if x.startswith(rt.id.split("/r")[0] + "/r"))
        new = Subtask(f"{rt.id.split('/r')[0]}/r{n + 1}", rt.subtask.description, rt.depth, robots, roles)
        self._set(rt, RtState.REPLANNED)
        copy = SubtaskRuntime(new, rt.task, rt.generation, self.config.tool_budget, origin=rt.id)
        t = self.by_task[rt.task]
        t.runtimes.append(copy)
        self.runtimes[copy.id] = copy
        self.transitions.append((self.now, copy.id, None, RtState.PENDING.value))
        self._monitor(rt.task, "monitor.recover", True, f"reassigned {rt.id} to {list(robots)}",
                      {"action": "reassign", "from": rt.id, "to": copy.id, "map": mapping}, copy.id)
        self._emit("recovery", task=rt.task, action="reassign", subtask=rt.id, to=copy.id, robots=list(robots))
        return "reassign"

    def _replan(self, t: TaskRun, rt: SubtaskRuntime) -> str | None:
        if t.replans >= self.config.replan_budget:
            return None
        t.replans += 1
        t.generation += 1
        for x in t.live:
            if x.state in (RtState.PENDING, RtState.READY, RtState.FAILED):
                self._set(x, RtState.REPLANNED)
        self._emit("recovery", task=t.task.id, action="replan", subtask=rt.id, code=rt.code)
        graph = self._plan(t)
        if graph is None:
            return "failed"
        self._install(t, graph)
        t.replanned += 1
        return "replan"

    def _fail_task(self, t: TaskRun, code: str) -> None:
        if t.terminal:
            return
        t.status = "FAILED"
        t.code = code
        for rt in t.runtimes:
            if rt.state in (RtState.PENDING, RtState.READY, RtState.RUNNING):
                self._set(rt, RtState.FAILED)
                self._release(rt)
        self._end(t, False)

    def _end(self, t: TaskRun, completed: bool) -> None:
        t.ended = self.now
        steps = sum(1 for line in self.trace if line["kind"] == "tool" and line["task"] == t.task.id)
        task = t.task
        self._emit("task_end", task=task.id, sequence=task.sequence, sq_index=task.sq_index, sq_len=task.sq_len,
                   level=task.level, domain=task.domain, completed=completed, error=t.code,
                   stage=stage_of(t.code), steps=steps, replanned=t.replanned, started=t.started)

    def _check_tasks(self) -> None:
        for t in self.tasks:
            if t.status != "ACTIVE":
                continue
            live = t.live
            if live and all(rt.state is RtState.DONE for rt in live):
                if all(self.world.holds(c) for c in t.scenario.goal):
                    t.status = "DONE"
                    self._end(t, True)
                else:
                    self._fail_task(t, "GOAL_MISMATCH")
            elif self.now - t.started >= self.config.task_timeout:
                self._emit("timeout", task=t.task.id)
                self._fail_task(t, "TIMEOUT")


def audit_schedule(orch: Orchestrator) -> list[str]:
    """Barrier, exclusivity, parallelism and conservation violations found in a finished run.

    Time is the position in the transition log, which orders events inside a tick.
    """
    out = []
    final: dict = {}
    started: dict = {}
    ended: dict = {}
    done_at: dict = {}
    for k, (_, sid, old, new) in enumerate(orch.transitions):
        final[sid] = new
        if new == RtState.RUNNING.value:
            started[sid] = k
        if old == RtState.RUNNING.value:
            ended[sid] = k
        if new == RtState.DONE.value:
            done_at[sid] = k
    for sid, state in final.items():
        if state not in (RtState.DONE.value, RtState.FAILED.value, RtState.REPLANNED.value):
            out.append(f"{sid} ended the run {state}")
    for t in orch.tasks:
        for rt in t.runtimes:
            if rt.id not in started:
                continue
            for other in t.runtimes:
                if other.generation != rt.generation or other.depth >= rt.depth:
                    continue
                if final[other.id] == RtState.REPLANNED.value:
                    continue
                if other.id not in done_at or done_at[other.id] > started[rt.id]:
                    out.append(f"{rt.id} (depth {rt.depth}) started before {other.id} was done")
    spans: dict = {}
    for sid, k0 in started.items():
        k1 = ended.get(sid, len(orch.transitions))
        for r in orch.runtimes[sid].robots:
            spans.setdefault(r, []).append((k0, k1, sid))
    for r, items in spans.items():
        items.sort()
        for (_, a1, x), (b0, _, y) in zip(items, items[1:]):
            if b0 < a1:
                out.append(f"{r} ran {x} and {y} at once")
    for dec in orch.decisions:
        seen: dict = {}
        for sid in dec.batch:
            for r in orch.runtimes[sid].robots:
                if r in seen and seen[r] != sid:
                    out.append(f"tick {dec.tick}: {r} dispatched to {seen[r]} and {sid}")
                seen[r] = sid
    return out


def _hops(tree: SceneTree, a: str, b: str) -> int:
    try:
        return tree.hops(a, b)
    except StemError:
        return 99


def _category_hint(tree: SceneTree, obj: str) -> str | None:
    if tree.find_object(obj):
        return tree.object(obj).category
    return None


def _skeleton(tree: SceneTree) -> SceneTree:
    """The static map: regions and carriers without any objects."""
    out = tree
    for _, o in tree.objects():
        out = out.remove_object(o.id)
    return out


def run_scenario(world: World, scenario: list[ScenarioTask], config: OrchestratorConfig = OrchestratorConfig(),
                 planner: Planner | None = None) -> Orchestrator:
    orch = Orchestrator(world, planner, config)
    orch.run(scenario)
    return orch


def write_trace(trace: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in trace:
            fh.write(canonical.dumps(line) + "\n")


def read_trace(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [canonical.loads(line) for line in fh if line.strip()]
