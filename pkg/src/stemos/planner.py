"""Task decomposition into depth-layered workflow graphs.

The rule planner matches the instruction against a small set of templates,
grounds categories and anaphora in the memory digest and assigns each subtask
to the nearest capable robot. Subtasks sharing a depth run in parallel; a
depth waits for every subtask of the previous one.
"""

from __future__ import annotations

import json
import re
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Protocol

from . import canonical
from .embodiment import EmbodimentRegistry, RobotProfile
from .errors import (
    HallucinationError,
    NoCapableRobotError,
    PlannerTimeoutError,
    TransportFailureError,
    UnknownTemplateError,
    UnresolvedReferenceError,
)
from .spatial import NodeKind, SceneNode, SceneTree
from .stem import DigestScope, MemoryDigest, MemoryState, build_digest

GOAL_TOOLS = {
    "fetch": ("navigate", "detect", "pick", "place"),
    "insert": ("navigate", "detect", "pick", "place"),
    "open": ("navigate", "open"),
    "wait": ("wait",),
}


@dataclass(frozen=True)
class GlobalTask:
    id: str
    instruction: str
    template: str | None = None
    arrival: int = 0
    previous: str | None = None
    sequence: str | None = None
    sq_index: int = 1
    sq_len: int = 1
    level: str | None = None
    domain: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id, "instruction": self.instruction, "template": self.template, "arrival": self.arrival,
            "previous": self.previous, "sequence": self.sequence, "sq_index": self.sq_index,
            "sq_len": self.sq_len, "level": self.level, "domain": self.domain,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GlobalTask:
        return cls(**{k: d[k] for k in (
            "id", "instruction", "template", "arrival", "previous", "sequence", "sq_index", "sq_len",
            "level", "domain") if k in d})


@dataclass(frozen=True)
class Goal:
    """One tool-intent goal.

    ``fetch`` moves ``obj`` (or an object of ``category``, or the referent of
    ``ref``) onto carrier ``dest``. ``insert`` puts it inside ``container``.
    ``open`` opens ``obj``. ``wait`` idles for ``count`` calls. ``source`` is an
    optional hint where to look first.
    """

    kind: str
    obj: str | None = None
    category: str | None = None
    dest: str | None = None
    container: str | None = None
    ref: str | None = None
    count: int = 1
    source: str | None = None

    @property
    def tools(self) -> tuple:
        return GOAL_TOOLS[self.kind]

    def describe(self) -> str:
        what = self.obj or (f"the {self.category}" if self.category else f"'{self.ref}'")
        if self.kind == "wait":
            return f"wait {self.count} steps"
        if self.kind == "open":
            return f"open {what}"
        if self.kind == "insert":
            return f"put {what} into {self.container}"
        return f"bring {what} to {self.dest}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "obj": self.obj, "category": self.category, "dest": self.dest,
                "container": self.container, "ref": self.ref, "count": self.count, "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> Goal:
        if d.get("kind") not in GOAL_TOOLS:
            raise ValueError(f"unknown goal kind {d.get('kind')!r}")
        return cls(d["kind"], d.get("obj"), d.get("category"), d.get("dest"), d.get("container"),
                   d.get("ref"), int(d.get("count", 1)), d.get("source"))


@dataclass(frozen=True)
class Subtask:
    id: str
    description: str
    depth: int
    robots: tuple
    roles: dict = field(default_factory=dict)

    @property
    def collaborative(self) -> bool:
        return len(self.robots) >= 2

    @property
    def goals(self) -> list[Goal]:
        return [g for r in self.robots for g in self.roles.get(r, ())]

    def tools_for(self, robot: str) -> set:
        return {t for g in self.roles.get(robot, ()) for t in g.tools}

    def to_dict(self) -> dict:
        return {"id": self.id, "description": self.description, "depth": self.depth, "robots": list(self.robots),
                "roles": {r: [g.to_dict() for g in gs] for r, gs in self.roles.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> Subtask:
        return cls(d["id"], d.get("description", ""), int(d["depth"]), tuple(d.get("robots", ())),
                   {r: tuple(Goal.from_dict(g) for g in gs) for r, gs in d.get("roles", {}).items()})


@dataclass(frozen=True)
class WorkflowGraph:
    task: str
    subtasks: tuple = ()
    generation: int = 0

    def depths(self) -> list[int]:
        return sorted({s.depth for s in self.subtasks})

    def layer(self, depth: int) -> list[Subtask]:
        return [s for s in self.subtasks if s.depth == depth]

    def triples(self) -> list[tuple]:
        return [(s.description, s.depth, list(s.robots)) for s in self.subtasks]

    def to_dict(self) -> dict:
        return {"task": self.task, "generation": self.generation, "subtasks": [s.to_dict() for s in self.subtasks]}

    @classmethod
    def from_dict(cls, d: dict) -> WorkflowGraph:
        return cls(d["task"], tuple(Subtask.from_dict(s) for s in d.get("subtasks", ())), int(d.get("generation", 0)))


@dataclass(frozen=True)
class PlanResult:
    trace: tuple
    graph: WorkflowGraph

    def to_dict(self) -> dict:
        return {"trace": list(self.trace), "graph": self.graph.to_dict()}


@dataclass(frozen=True)
class PlannerContext:
    """Planner input, always combined in the fixed order M_s, M_t, M_r, instruction."""

    M_s: tuple
    M_t: tuple
    M_r: tuple
    T_global: str
    task: str = ""
    previous: str | None = None
    generation: int = 0

    @classmethod
    def from_digest(cls, digest: MemoryDigest, task: GlobalTask, generation: int = 0) -> PlannerContext:
        return cls(digest.spatial, digest.temporal, digest.robots, task.instruction, task.id, task.previous,
                   generation)

    def text(self) -> str:
        return canonical.dumps([list(self.M_s), list(self.M_t), list(self.M_r), self.T_global])

    def to_dict(self) -> dict:
        return {"M_s": list(self.M_s), "M_t": list(self.M_t), "M_r": list(self.M_r), "T_global": self.T_global,
                "task": self.task, "previous": self.previous, "generation": self.generation}


# ---------------------------------------------------------------------------
# instruction templates


@dataclass(frozen=True)
class RuleSet:
    recipes: dict = field(default_factory=lambda: {
        "burger": ("bun", "patty"),
        "salad": ("lettuce", "tomato"),
        "sandwich": ("bread", "cheese"),
        "breakfast": ("egg", "milk"),
    })
    prep_categories: tuple = ("prep_counter", "counter")
    serve_categories: tuple = ("dining_table", "serving_counter", "table")


DEFAULT_RULES = RuleSet()

_ARTICLE = re.compile(r"^(?:a|an|the|one|some)\s+")
_FETCH_RE = re.compile(r"^(?:bring|fetch|get|gather|collect) (?P<items>.+?) to (?:the )?(?P<dest>\w+)$")
_DELIVER_RE = re.compile(r"^now (?:take|bring|move|carry) (?P<ref>it|them) to (?:the )?(?P<dest>\w+)$")
_SERVE_RE = re.compile(
    r"^(?:prepare|make|order|serve) (?:a|an|one) (?:(?P<style>\w+) )?(?P<dish>[a-z]+)"
    r"(?: and serve it to (?:the )?(?P<dest>\w+))?$")
_PACK_RE = re.compile(r"^(?:pack|package|put) (?:a |an |the )?(?P<item>\w+) (?:into|in) (?:a |an |the )?(?P<container>\w+)$")


@dataclass(frozen=True)
class ParsedTask:
    template: str
    items: tuple = ()
    dest: str | None = None
    ref: str | None = None
    container: str | None = None
    dish: str | None = None


def _split_items(text: str) -> tuple:
    parts = re.split(r",\s*|\s+and\s+", text.strip())
    out = []
    for p in parts:
        p = _ARTICLE.sub("", p.strip())
        if not p:
            continue
        if not re.fullmatch(r"\w+", p):
            raise UnknownTemplateError(f"cannot read item {p!r}")
        out.append(p)
    return tuple(out)


def parse_instruction(instruction: str, rules: RuleSet = DEFAULT_RULES) -> ParsedTask:
    text = " ".join(instruction.lower().strip().rstrip(".!").split())
    m = _DELIVER_RE.match(text)
    if m:
        return ParsedTask("deliver", dest=m["dest"], ref=m["ref"])
    m = _SERVE_RE.match(text)
    if m and m["dish"] in rules.recipes:
        return ParsedTask("prepare_serve", tuple(rules.recipes[m["dish"]]), m["dest"], dish=m["dish"])
    m = _PACK_RE.match(text)
    if m:
        return ParsedTask("package", (m["item"],), container=m["container"])
    m = _FETCH_RE.match(text)
    if m:
        items = _split_items(m["items"])
        if items:
            return ParsedTask("fetch" if len(items) == 1 else "gather", items, m["dest"])
    raise UnknownTemplateError(f"no template matches {instruction!r}")


# ---------------------------------------------------------------------------
# grounding view over a context


class _View:
    """Indexes over the digest: a skeleton scene tree, object locations and a roster."""

    def __init__(self, ctx: PlannerContext):
        tree = SceneTree.empty()
        self.objects: dict[str, tuple[str, str]] = {}
        carriers = []
        for region in ctx.M_s:
            tree = tree.add_node(SceneNode(region["region"], NodeKind.REGION, region.get("name", region["region"]),
                                           tree.root, tuple(region.get("position", (0.0, 0.0)))))
            for c in region["carriers"]:
                carriers.append(SceneNode(c["id"], NodeKind.CARRIER, c["id"], region["region"],
                                          tuple(c.get("position", (0.0, 0.0))), category=c.get("category", ""),
                                          tags=tuple(c.get("tags", ()))))
                for o in c.get("objects", ()):
                    self.objects[o["id"]] = (c["id"], o["category"])
        for c in carriers:
            tree = tree.add_node(c)
        self.tree = tree
        self.registry = EmbodimentRegistry({r["id"]: RobotProfile.from_dict(r) for r in ctx.M_r})
        self.history = ctx.M_t
        self.has_spatial = bool(ctx.M_s)

    def carrier_of(self, obj: str) -> str | None:
        hit = self.objects.get(obj)
        return hit[0] if hit else None

    def objects_of(self, category: str) -> list[str]:
        return sorted(o for o, (_, cat) in self.objects.items() if cat == category)

    def carriers_with_category(self, cats) -> list[str]:
        return [c.id for cat in cats for c in self.tree.carriers() if c.category == cat]

    def candidate_sources(self, category: str) -> list[str]:
        tag = f"stores:{category}"
        return [c.id for c in self.tree.carriers() if tag in c.tags]

    def rank(self, tools, near: str | None, include_busy: bool) -> list[str]:
        tools = list(tools)
        ranked = self.registry.find_capable(tools[0], near if near in self.tree else None,
                                            self.tree if self.has_spatial else None, include_busy)
        return [r for r in ranked if set(tools) <= self.registry.robots[r].capabilities]


def _delivered_by(history, task: str | None) -> list[str]:
    out = []
    for rec in history:
        if rec.get("task") == task and rec.get("tool") == "place" and rec.get("status") == "OK":
            obj = rec.get("args", {}).get("object")
            if obj in out:
                out.remove(obj)
            out.append(obj)
    return out


class _Assigner:
    def __init__(self, view: _View, trace: list):
        self.view = view
        self.trace = trace

    def pick(self, tools, near: str | None, used: set, count: int = 1) -> list[str]:
        idle = self.view.rank(tools, near, include_busy=False)
        anyone = self.view.rank(tools, near, include_busy=True)
        order = [r for r in idle if r not in used]
        order += [r for r in anyone if r not in used and r not in order]
        order += [r for r in idle if r not in order]
        order += [r for r in anyone if r not in order]
        if not order:
            raise NoCapableRobotError(f"no robot offers {sorted(tools)}")
        chosen = order[:count]
        self.trace.append(f"assign {chosen} for {'+'.join(sorted(tools))} near {near or 'anywhere'}")
        return chosen


def _ground_item(view: _View, category: str, taken: set, trace: list) -> Goal:
    hits = [o for o in view.objects_of(category) if o not in taken]
    if hits:
        obj = hits[0]
        taken.add(obj)
        trace.append(f"ground {category} -> {obj} on {view.carrier_of(obj)}")
        return Goal("fetch", obj=obj, category=category)
    trace.append(f"{category} not in spatial memory; search at run time")
    return Goal("fetch", category=category)


def _near(view: _View, goal: Goal) -> str | None:
    if goal.obj and view.carrier_of(goal.obj):
        return view.carrier_of(goal.obj)
    if goal.source:
        return goal.source
    if goal.category:
        cands = view.candidate_sources(goal.category)
        if cands:
            return cands[0]
    return goal.dest


def _with(goal: Goal, **changes) -> Goal:
    d = goal.to_dict()
    d.update(changes)
    return Goal.from_dict(d)


def decompose(ctx: PlannerContext, rules: RuleSet = DEFAULT_RULES, seed: int = 0) -> PlanResult:
    """Deterministic rule-based decomposition of ``ctx.T_global``.

    ``seed`` is accepted for interface parity with stochastic planners; the
    rules themselves break every tie by id.
    """
    parsed = parse_instruction(ctx.T_global, rules)
    trace = [f"template {parsed.template} matched"]
    view = _View(ctx)
    if not view.registry.robots:
        raise NoCapableRobotError("robot roster is empty")
    assign = _Assigner(view, trace)
    layers: list[list[tuple[str, dict]]] = []

    def single(goal: Goal, used: set) -> tuple[str, dict]:
        robot = assign.pick(goal.tools, _near(view, goal), used)[0]
        used.add(robot)
        return goal.describe(), {robot: (goal,)}

    if parsed.template in ("fetch", "gather"):
        taken: set = set()
        used: set = set()
        goals = [_with(_ground_item(view, c, taken, trace), dest=parsed.dest) for c in parsed.items]
        layers.append([single(g, used) for g in goals])

    elif parsed.template == "deliver":
        objs = _delivered_by(view.history, ctx.previous)
        if parsed.ref == "it":
            objs = objs[-1:]
        used = set()
        if objs:
            trace.append(f"resolve '{parsed.ref}' -> {objs} from the previous task's records")
            goals = [Goal("fetch", obj=o, category=view.objects.get(o, (None, None))[1], dest=parsed.dest)
                     for o in objs]
        else:
            trace.append(f"'{parsed.ref}' has no recorded referent; resolve by perception")
            goals = [Goal("fetch", ref=parsed.ref, count=1 if parsed.ref == "it" else 2, dest=parsed.dest)]
        layers.append([single(g, used) for g in goals])

    elif parsed.template == "prepare_serve":
        dest = parsed.dest
        if dest is None:
            serve = view.carriers_with_category(rules.serve_categories)
            if not serve:
                raise UnresolvedReferenceError("no serving location known")
            dest = serve[0]
        preps = view.carriers_with_category(rules.prep_categories)
        if view.has_spatial and dest in view.tree:
            region = view.tree.region_of(dest)
            preps.sort(key=lambda c: (view.tree.nodes[c].parent != region, c))
        prep = preps[0] if preps else dest
        trace.append(f"prepare {parsed.dish} at {prep}, serve at {dest}")
        taken, used = set(), set()
        goals = [_with(_ground_item(view, c, taken, trace), dest=prep) for c in parsed.items]
        layers.append([single(g, used) for g in goals])
        serve_goals = [_with(g, dest=dest, source=prep) for g in goals]
        robots = assign.pick(GOAL_TOOLS["fetch"], prep, set(), count=len(serve_goals))
        roles: dict[str, list] = {r: [] for r in robots}
        for i, g in enumerate(serve_goals):
            roles[robots[i % len(robots)]].append(g)
        layers.append([(f"serve {parsed.dish} to {dest}", {r: tuple(gs) for r, gs in roles.items()})])

    elif parsed.template == "package":
        containers = view.objects_of(parsed.container)
        if not containers:
            raise UnresolvedReferenceError(f"no {parsed.container} known in spatial memory")
        box = containers[0]
        station = view.carrier_of(box)
        trace.append(f"package into {box} on {station}")
        taken, used = {box}, set()
        item = _with(_ground_item(view, parsed.items[0], taken, trace), dest=station)
        layers.append([single(Goal("open", obj=box, category=parsed.container, dest=station), used),
                       single(item, used)])
        insert = Goal("insert", obj=item.obj, category=item.category, dest=station, container=box, source=station)
        layers.append([single(insert, set())])

    subtasks = []
    for depth, layer in enumerate(layers, 1):
        for desc, roles in layer:
            sid = f"{ctx.task}/g{ctx.generation}/s{len(subtasks) + 1}"
            subtasks.append(Subtask(sid, desc, depth, tuple(roles), roles))
    graph = WorkflowGraph(ctx.task, tuple(subtasks), ctx.generation)
    trace.append(f"graph with {len(subtasks)} subtasks over {len(layers)} layers")
    return PlanResult(tuple(trace), graph)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str
    subtask: str | None = None

    def to_dict(self) -> dict:
        return {"code": self.code, "detail": self.detail, "subtask": self.subtask}


def validate_graph(graph: WorkflowGraph, roster: EmbodimentRegistry | None = None,
                   tree: SceneTree | None = None, objects: dict | None = None) -> list[Violation]:
    """All problems found; an empty list means the graph is executable as far as memory can tell.

    ``objects`` (id -> category) names objects known outside ``tree``, e.g. from a digest.
    """
    objects = objects or {}
    out: list[Violation] = []
    if not graph.subtasks:
        return [Violation("EMPTY_GRAPH", "graph has no subtasks")]
    depths = graph.depths()
    if depths != list(range(1, len(depths) + 1)):
        out.append(Violation("NONCONTIGUOUS_DEPTHS", f"depths {depths} are not 1..{len(depths)}"))
    seen = set()
    held = {r.holding for r in roster.robots.values() if r.holding} if roster is not None else set()
    known_categories = None
    if tree is not None:
        known_categories = {o.category for _, o in tree.objects()} | set(objects.values())
        for c in tree.carriers():
            known_categories.update(t.split(":", 1)[1] for t in c.tags if t.startswith("stores:"))
    for s in graph.subtasks:
        if s.id in seen:
            out.append(Violation("DUPLICATE_SUBTASK", f"id {s.id} repeats", s.id))
        seen.add(s.id)
        if not s.robots:
            out.append(Violation("EMPTY_ASSIGNMENT", "no robot assigned", s.id))
        if set(s.roles) != set(s.robots) or len(set(s.robots)) != len(s.robots):
            out.append(Violation("ROLE_MISMATCH", "roles must cover exactly the assigned robots", s.id))
        for r in s.robots:
            if roster is not None and r not in roster.robots:
                out.append(Violation("UNKNOWN_ROBOT", f"robot {r} is not registered", s.id))
                continue
            if roster is not None:
                missing = s.tools_for(r) - roster.robots[r].capabilities
                if missing:
                    out.append(Violation("CAPABILITY_MISSING", f"{r} lacks {sorted(missing)}", s.id))
        if tree is None:
            continue
        for g in s.goals:
            for loc in (g.dest, g.source):
                if loc is not None and (loc not in tree.nodes or tree.nodes[loc].kind is not NodeKind.CARRIER):
                    out.append(Violation("HALLUCINATED_LOCATION", f"location {loc} does not exist", s.id))
            for obj in (g.obj, g.container):
                if obj is not None and tree.find_object(obj) is None and obj not in held and obj not in objects:
                    out.append(Violation("HALLUCINATED_OBJECT", f"object {obj} does not exist", s.id))
            if g.category is not None and g.category not in known_categories:
                out.append(Violation("HALLUCINATED_OBJECT", f"no {g.category} anywhere in memory or priors", s.id))
    return out


# ---------------------------------------------------------------------------
# planner front ends


class Planner(Protocol):
    def plan(self, ctx: PlannerContext) -> PlanResult: ...


@dataclass
class RulePlanner:
    rules: RuleSet = DEFAULT_RULES
    seed: int = 0

    def plan(self, ctx: PlannerContext) -> PlanResult:
        return decompose(ctx, self.rules, self.seed)


@dataclass
class FixedPlanner:
    """Replays a prepared graph per task, renumbering subtask ids for each generation."""

    graphs: dict

    def plan(self, ctx: PlannerContext) -> PlanResult:
        g = self.graphs[ctx.task]
        subtasks = tuple(Subtask(f"{ctx.task}/g{ctx.generation}/s{i}", s.description, s.depth, s.robots, s.roles)
                         for i, s in enumerate(g.subtasks, 1))
        return PlanResult(("fixed graph",), WorkflowGraph(ctx.task, subtasks, ctx.generation))


def remote_request(ctx: PlannerContext) -> dict:
    tools = sorted({t for r in ctx.M_r for t in r.get("capabilities", ())})
    return {
        "task": ctx.task,
        "instruction": ctx.T_global,
        "spatial": list(ctx.M_s),
        "feedback": list(ctx.M_t),
        "roster": list(ctx.M_r),
        "tools": tools,
        "generation": ctx.generation,
    }


def parse_remote_response(doc: dict, ctx: PlannerContext) -> PlanResult:
    """Response: ``{"trace": [...], "subtasks": [{"description", "depth", "robots", "roles"?}]}``."""
    subtasks = []
    for i, s in enumerate(doc.get("subtasks", ()), 1):
        robots = tuple(s.get("robots", ()))
        roles = {r: tuple(Goal.from_dict(g) for g in gs) for r, gs in s.get("roles", {}).items()}
        sid = s.get("id") or f"{ctx.task}/g{ctx.generation}/s{i}"
        subtasks.append(Subtask(sid, s.get("description", ""), int(s["depth"]), robots, roles))
    return PlanResult(tuple(doc.get("trace", ())), WorkflowGraph(ctx.task, tuple(subtasks), ctx.generation))


def remote_decompose(ctx: PlannerContext, endpoint: str, timeout: float = 30.0,
                     roster: EmbodimentRegistry | None = None, tree: SceneTree | None = None) -> PlanResult:
    """One request/response exchange with an external planner, then validation.

    Without an explicit ``roster``/``tree`` the graph is checked against the
    context's own digest.
    """
    body = canonical.dumpb(remote_request(ctx))
    req = urllib.request.Request(endpoint, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except (socket.timeout, TimeoutError) as exc:
        raise PlannerTimeoutError(f"planner at {endpoint} did not answer in {timeout}s") from exc
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, (socket.timeout, TimeoutError)):
            raise PlannerTimeoutError(f"planner at {endpoint} did not answer in {timeout}s") from exc
        raise TransportFailureError(f"cannot reach planner at {endpoint}: {exc.reason}") from exc
    except (OSError, ValueError) as exc:
        raise TransportFailureError(f"cannot reach planner at {endpoint}: {exc}") from exc
    try:
        result = parse_remote_response(json.loads(raw), ctx)
    except (ValueError, KeyError, TypeError) as exc:
        raise HallucinationError(f"unreadable plan: {exc}", [Violation("MALFORMED_PLAN", str(exc))]) from exc
    objects = None
    if roster is None:
        view = _View(ctx)
        roster, tree = view.registry, (view.tree if view.has_spatial else None)
        objects = {o: cat for o, (_, cat) in view.objects.items()}
    violations = validate_graph(result.graph, roster, tree, objects)
    if violations:
        raise HallucinationError(f"{len(violations)} plan violations", violations)
    return result


@dataclass
class RemotePlanner:
    endpoint: str
    timeout: float = 30.0

    def plan(self, ctx: PlannerContext) -> PlanResult:
        return remote_decompose(ctx, self.endpoint, self.timeout)


# ---------------------------------------------------------------------------
# scoping


def scope_for(task: GlobalTask, state: MemoryState, rules: RuleSet = DEFAULT_RULES) -> DigestScope:
    """Regions the instruction touches plus where the robots are; history of this task and its predecessor."""
    tree = state.spatial
    regions = set()
    categories: tuple = ()
    try:
        parsed = parse_instruction(task.instruction, rules)
    except UnknownTemplateError:
        parsed = None
    if parsed is not None:
        categories = tuple(parsed.items) + ((parsed.container,) if parsed.container else ())
        if parsed.dest in tree.nodes and tree.nodes[parsed.dest].kind is not NodeKind.ROOT:
            regions.add(tree.region_of(parsed.dest))
        if parsed.template == "prepare_serve":
            for c in tree.carriers():
                if c.category in rules.prep_categories + rules.serve_categories:
                    regions.add(c.parent)
        if parsed.template == "deliver" and task.previous:
            for e in state.temporal.for_task(task.previous):
                for rec in e.tool_log:
                    obj = rec.args.get("object") if rec.tool == "place" else None
                    if obj and tree.find_object(obj):
                        regions.add(tree.region_of(tree.find_object(obj)))
    for r in state.embodiment.robots.values():
        if r.loc in tree.nodes and tree.nodes[r.loc].kind is not NodeKind.ROOT:
            regions.add(tree.region_of(r.loc))
    tasks = (task.id,) + ((task.previous,) if task.previous else ())
    return DigestScope(tasks=tasks, regions=tuple(sorted(regions)), categories=categories)


def build_context(task: GlobalTask, state: MemoryState, generation: int = 0, spatial: bool = True,
                  temporal: bool = True, embodiment: bool = True, rules: RuleSet = DEFAULT_RULES) -> PlannerContext:
    base = scope_for(task, state, rules)
    scope = DigestScope(base.tasks, base.regions, base.categories, base.history, spatial, temporal, embodiment)
    return PlannerContext.from_digest(build_digest(state, scope), task, generation)
