"""Shared memory state folded from an append-only event log.

``apply_event`` is the only transition. It is pure: the returned state shares
structure with its input but the input value never changes, so readers may
hold any older state while the single writer keeps folding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from . import canonical
from .embodiment import EmbodimentDelta, EmbodimentRegistry
from .errors import (
    CorruptSnapshotError,
    DanglingReferenceError,
    MalformedDeltaError,
    SequenceGapError,
    StemError,
    UnknownLocationError,
    UnknownNodeError,
    UnknownObjectError,
    UnknownRobotError,
)
from .geometry import Transform
from .spatial import NodeKind, ObjectNode, SceneNode, SceneTree, locate_candidates

FORMAT_VERSION = 1


class Status(str, Enum):
    OK = "OK"
    FAIL = "FAIL"


@dataclass(frozen=True)
class ToolCallRecord:
    tool: str
    args: dict = field(default_factory=dict)
    status: Status = Status.OK
    feedback: str = ""
    robot: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "status", Status(self.status))
        if self.status is Status.FAIL and not self.feedback:
            raise MalformedDeltaError(f"FAIL record for {self.tool} needs feedback")

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    def to_dict(self) -> dict:
        return {"tool": self.tool, "args": dict(self.args), "status": self.status.value,
                "feedback": self.feedback, "robot": self.robot}

    @classmethod
    def from_dict(cls, d: dict) -> ToolCallRecord:
        return cls(d["tool"], dict(d.get("args", {})), Status(d.get("status", "OK")),
                   d.get("feedback", ""), d.get("robot"))


class Variant(str, Enum):
    ADD = "ADD"
    REMOVE = "REMOVE"
    MOVE = "MOVE"
    TREE_EDIT = "TREE_EDIT"
    SET_STATE = "SET_STATE"


@dataclass(frozen=True)
class SpatialDelta:
    """One spatial edit. Payload values are typed (``ObjectNode``, ``Transform``, ``SceneNode``)."""

    variant: Variant
    target: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        p = self.payload
        v = self.variant
        if v is Variant.ADD:
            if not isinstance(p.get("object"), ObjectNode) or not isinstance(p.get("carrier"), str):
                raise MalformedDeltaError("ADD needs a carrier and full object attributes")
            if p["object"].id != self.target:
                raise MalformedDeltaError("ADD target must equal the object id")
        elif v is Variant.MOVE:
            T = p.get("transform")
            if not isinstance(T, Transform) or not T.is_valid():
                raise MalformedDeltaError("MOVE payload must be a rigid transform")
        elif v is Variant.SET_STATE:
            if not isinstance(p.get("state"), dict) or not p["state"]:
                raise MalformedDeltaError("SET_STATE needs a non-empty state patch")
        elif v is Variant.TREE_EDIT:
            op = p.get("op")
            if op == "add":
                if not isinstance(p.get("node"), SceneNode) or p["node"].id != self.target:
                    raise MalformedDeltaError("tree add needs the node itself")
            elif op == "update":
                if not isinstance(p.get("fields"), dict) or not p["fields"]:
                    raise MalformedDeltaError("tree update needs fields")
            elif op != "remove":
                raise MalformedDeltaError(f"unknown tree op {op!r}")

    # constructors

    @classmethod
    def add(cls, carrier: str, node: ObjectNode) -> SpatialDelta:
        return cls(Variant.ADD, node.id, {"carrier": carrier, "object": node})

    @classmethod
    def remove(cls, obj_id: str) -> SpatialDelta:
        return cls(Variant.REMOVE, obj_id, {})

    @classmethod
    def move(cls, obj_id: str, transform: Transform) -> SpatialDelta:
        return cls(Variant.MOVE, obj_id, {"transform": transform})

    @classmethod
    def set_state(cls, obj_id: str, patch: dict) -> SpatialDelta:
        return cls(Variant.SET_STATE, obj_id, {"state": dict(patch)})

    @classmethod
    def tree_add(cls, node: SceneNode) -> SpatialDelta:
        return cls(Variant.TREE_EDIT, node.id, {"op": "add", "node": node})

    @classmethod
    def tree_remove(cls, node_id: str) -> SpatialDelta:
        return cls(Variant.TREE_EDIT, node_id, {"op": "remove"})

    @classmethod
    def tree_update(cls, node_id: str, **fields) -> SpatialDelta:
        return cls(Variant.TREE_EDIT, node_id, {"op": "update", "fields": fields})

    def apply(self, tree: SceneTree) -> SceneTree:
        p, v = self.payload, self.variant
        if v is Variant.ADD:
            return tree.add_object(p["carrier"], p["object"])
        if v is Variant.REMOVE:
            return tree.remove_object(self.target)
        if v is Variant.MOVE:
            return tree.move_object(self.target, p["transform"])
        if v is Variant.SET_STATE:
            return tree.set_object_state(self.target, p["state"])
        op = p["op"]
        if op == "add":
            return tree.add_node(p["node"])
        if op == "remove":
            return tree.remove_node(self.target)
        fields = dict(p["fields"])
        for k in ("position", "surface", "media", "tags"):
            if k in fields:
                fields[k] = tuple(fields[k])
        return tree.update_node(self.target, **fields)

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "target": self.target, "payload": canonical.plain(self.payload)}

    @classmethod
    def from_dict(cls, d: dict) -> SpatialDelta:
        try:
            v = Variant(d["variant"])
            p = dict(d.get("payload", {}))
            if v is Variant.ADD:
                p["object"] = ObjectNode.from_dict(p["object"])
            elif v is Variant.MOVE:
                p["transform"] = Transform.from_dict(p["transform"])
            elif v is Variant.TREE_EDIT and p.get("op") == "add":
                p["node"] = SceneNode.from_dict(p["node"])
            return cls(v, d["target"], p)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDeltaError(f"bad spatial delta: {exc}") from exc


@dataclass(frozen=True)
class Event:
    seq: int
    tau: int
    spatial_delta: SpatialDelta | None = None
    embodiment_delta: EmbodimentDelta | None = None
    task_id: str | None = None
    pre_subtask_queue: tuple = ()
    tool_log: tuple = ()
    subtask: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "pre_subtask_queue", tuple(self.pre_subtask_queue))
        object.__setattr__(self, "tool_log", tuple(self.tool_log))
        if self.spatial_delta is None and self.embodiment_delta is None and not self.tool_log:
            raise MalformedDeltaError("event carries no delta and no tool record")
        if not isinstance(self.seq, int) or not isinstance(self.tau, int) or self.tau < 0:
            raise MalformedDeltaError("seq and tau must be integers, tau non-negative")

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "tau": self.tau,
            "spatial_delta": self.spatial_delta.to_dict() if self.spatial_delta else None,
            "embodiment_delta": self.embodiment_delta.to_dict() if self.embodiment_delta else None,
            "task_id": self.task_id,
            "subtask": self.subtask,
            "pre_subtask_queue": list(self.pre_subtask_queue),
            "tool_log": [r.to_dict() for r in self.tool_log],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Event:
        try:
            return cls(
                seq=d["seq"],
                tau=d["tau"],
                spatial_delta=SpatialDelta.from_dict(d["spatial_delta"]) if d.get("spatial_delta") else None,
                embodiment_delta=EmbodimentDelta.from_dict(d["embodiment_delta"]) if d.get("embodiment_delta") else None,
                task_id=d.get("task_id"),
                subtask=d.get("subtask"),
                pre_subtask_queue=tuple(d.get("pre_subtask_queue", ())),
                tool_log=tuple(ToolCallRecord.from_dict(r) for r in d.get("tool_log", ())),
            )
        except (KeyError, TypeError) as exc:
            raise MalformedDeltaError(f"bad event: {exc}") from exc


class TemporalQueue:
    """Append-only record sequence.

    Values share one backing list; a value sees only its first ``n`` items, so
    appending to an old value copies instead of disturbing newer ones.
    """

    __slots__ = ("_items", "_n")

    def __init__(self, items: list | None = None, n: int | None = None):
        self._items = items if items is not None else []
        self._n = len(self._items) if n is None else n

    def append(self, record: Event) -> TemporalQueue:
        if len(self._items) == self._n:
            self._items.append(record)
            return TemporalQueue(self._items, self._n + 1)
        return TemporalQueue(self._items[: self._n] + [record], self._n + 1)

    def __len__(self) -> int:
        return self._n

    def __iter__(self) -> Iterator[Event]:
        return iter(self._items[: self._n])

    def __getitem__(self, i):
        return self._items[: self._n][i]

    def for_task(self, task_id: str) -> list[Event]:
        return [e for e in self if e.task_id == task_id]

    def to_list(self) -> list:
        return [e.to_dict() for e in self]


@dataclass(frozen=True, eq=False)
class MemoryState:
    spatial: SceneTree
    temporal: TemporalQueue = field(default_factory=TemporalQueue)
    embodiment: EmbodimentRegistry = field(default_factory=EmbodimentRegistry)
    version: int = 0

    @classmethod
    def initial(cls, tree: SceneTree, registry: EmbodimentRegistry | None = None) -> MemoryState:
        return cls(tree, TemporalQueue(), registry or EmbodimentRegistry(), 0)

    def to_dict(self) -> dict:
        return {
            "spatial": self.spatial.to_dict(),
            "temporal": self.temporal.to_list(),
            "embodiment": self.embodiment.to_dict(),
        }

    def canonical(self) -> bytes:
        return canonical.dumpb({"version": self.version, "state": self.to_dict()})

    def __eq__(self, other) -> bool:
        return isinstance(other, MemoryState) and self.canonical() == other.canonical()

    __hash__ = None


_DANGLING = (UnknownNodeError, UnknownObjectError, UnknownRobotError, UnknownLocationError)


def apply_event(state: MemoryState, event: Event) -> MemoryState:
    if event.seq != state.version + 1:
        raise SequenceGapError(f"expected seq {state.version + 1}, got {event.seq}", seq=event.seq)
    if len(state.temporal) and event.tau < state.temporal[-1].tau:
        raise MalformedDeltaError(f"tau {event.tau} precedes previous record", seq=event.seq)
    tree, registry = state.spatial, state.embodiment
    try:
        if event.spatial_delta is not None:
            tree = event.spatial_delta.apply(tree)
        if event.embodiment_delta is not None:
            registry = registry.apply(event.embodiment_delta, tree)
            held = event.embodiment_delta.payload.get("holding")
            if held is not None and tree.find_object(held) is not None:
                raise MalformedDeltaError(f"{held} cannot be held while placed on a carrier")
        d = event.spatial_delta
        if d is not None and d.variant is Variant.ADD:
            for r in registry.robots.values():
                if r.holding == d.target:
                    raise MalformedDeltaError(f"{d.target} added while still held by {r.id}")
    except _DANGLING as exc:
        raise DanglingReferenceError(str(exc), seq=event.seq) from exc
    except MalformedDeltaError as exc:
        if "seq" not in exc.context:
            exc.context["seq"] = event.seq
        raise
    except StemError as exc:
        raise MalformedDeltaError(str(exc), seq=event.seq) from exc
    return MemoryState(tree, state.temporal.append(event), registry, state.version + 1)


def reduce(initial: MemoryState, events: Iterable[Event]) -> MemoryState:
    state = initial
    for e in events:
        state = apply_event(state, e)
    return state


def snapshot(state: MemoryState) -> bytes:
    return canonical.dumpb({"format_version": FORMAT_VERSION, "version": state.version, "state": state.to_dict()})


def restore(data: bytes | str) -> MemoryState:
    try:
        doc = canonical.loads(data)
        if doc.get("format_version") != FORMAT_VERSION:
            raise CorruptSnapshotError(f"unsupported format {doc.get('format_version')!r}")
        body = doc["state"]
        events = [Event.from_dict(e) for e in body["temporal"]]
        version = int(doc["version"])
        if len(events) != version:
            raise CorruptSnapshotError("temporal length disagrees with version")
        return MemoryState(SceneTree.from_dict(body["spatial"]), TemporalQueue(events),
                           EmbodimentRegistry.from_dict(body["embodiment"]), version)
    except CorruptSnapshotError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError, StemError) as exc:
        raise CorruptSnapshotError(f"cannot parse snapshot: {exc}") from exc


# ---------------------------------------------------------------------------
# event log files


def dump_events(events: Iterable[Event]) -> str:
    return "".join(canonical.dumps(e) + "\n" for e in events)


def parse_events(text: str) -> list[Event]:
    out = []
    for i, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(Event.from_dict(canonical.loads(line)))
        except ValueError as exc:
            raise MalformedDeltaError(f"log line {i} is not valid: {exc}") from exc
    return out


def write_log(events: Iterable[Event], path: str | Path) -> None:
    Path(path).write_text(dump_events(events), encoding="utf-8")


def read_log(path: str | Path) -> list[Event]:
    return parse_events(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# planner digest


@dataclass(frozen=True)
class DigestScope:
    """What the planner is about to reason over.

    ``regions`` are included outright; ``categories`` pull in the regions of
    their candidate carriers. ``spatial``/``temporal``/``embodiment`` switch the
    corresponding memory off for ablations.
    """

    tasks: tuple = ()
    regions: tuple = ()
    categories: tuple = ()
    history: int = 60
    spatial: bool = True
    temporal: bool = True
    embodiment: bool = True


@dataclass(frozen=True)
class MemoryDigest:
    spatial: tuple = ()
    temporal: tuple = ()
    robots: tuple = ()

    def to_dict(self) -> dict:
        return {"M_s": list(self.spatial), "M_t": list(self.temporal), "M_r": list(self.robots)}

    def feedback_texts(self) -> list[str]:
        return [r["feedback"] for r in self.temporal if r.get("feedback")]


def _carrier_summary(c: SceneNode) -> dict:
    g = c.graph
    return {
        "id": c.id,
        "category": c.category,
        "position": list(c.position),
        "tags": list(c.tags),
        "objects": [{"id": o.id, "category": o.category, "state": dict(o.state)} for _, o in sorted(g.nodes.items())],
        "relations": sorted([s, r.value, o] for s, r, o in g.edges if r.value != "NEAR"),
    }


def build_digest(state: MemoryState, scope: DigestScope = DigestScope()) -> MemoryDigest:
    tree = state.spatial
    spatial = []
    if scope.spatial:
        wanted = {r for r in scope.regions if r in tree and tree.nodes[r].kind is NodeKind.REGION}
        for cat in scope.categories:
            wanted.update(tree.region_of(c) for c in locate_candidates(tree, cat))
        for rid in sorted(wanted):
            r = tree.nodes[rid]
            spatial.append({"region": rid, "name": r.name, "position": list(r.position),
                            "carriers": [_carrier_summary(c) for c in tree.carriers(rid)]})
    temporal = []
    if scope.temporal and scope.tasks:
        wanted_tasks = set(scope.tasks)
        for e in state.temporal:
            if e.task_id not in wanted_tasks:
                continue
            for rec in e.tool_log:
                temporal.append({"seq": e.seq, "tau": e.tau, "task": e.task_id, "subtask": e.subtask, "robot": rec.robot,
                                 "tool": rec.tool, "args": dict(rec.args), "status": rec.status.value,
                                 "feedback": rec.feedback})
        temporal = temporal[-scope.history:] if scope.history else []
    robots = []
    if scope.embodiment:
        robots = [r.to_dict() for r in state.embodiment.roster()]
    return MemoryDigest(tuple(spatial), tuple(temporal), tuple(robots))


# ---------------------------------------------------------------------------
# single writer


class StemStore:
    """The one writer: stamps sequence numbers, folds events and keeps the log."""

    def __init__(self, state: MemoryState):
        self.initial = state
        self.state = state
        self.log: list[Event] = []
        self._by_task: dict[str, list[Event]] = {}

    def append(self, tau: int, spatial: SpatialDelta | None = None, embodiment: EmbodimentDelta | None = None,
               tool_log: Iterable[ToolCallRecord] = (), task_id: str | None = None, subtask: str | None = None,
               pre: Iterable[str] = ()) -> Event:
        e = Event(self.state.version + 1, tau, spatial, embodiment, task_id, tuple(pre), tuple(tool_log), subtask)
        self.state = apply_event(self.state, e)
        self.log.append(e)
        if task_id is not None:
            self._by_task.setdefault(task_id, []).append(e)
        return e

    def task_events(self, task_id: str) -> list[Event]:
        return list(self._by_task.get(task_id, ()))

    def replay(self) -> MemoryState:
        return reduce(self.initial, self.log)
