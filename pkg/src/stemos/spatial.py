"""Spatial memory: a root/region/carrier scene tree whose carriers anchor object graphs.

Object graph edges are never stored independently of poses: every edit
re-evaluates exactly the ordered pairs that involve the edited object, so the
edge set always equals the brute-force predicate closure.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import (
    DuplicateIdError,
    DuplicateObjectError,
    InvalidTransformError,
    MalformedDeltaError,
    OrphanCarrierError,
    UnknownNodeError,
    UnknownObjectError,
)
from .geometry import Transform


class Relation(str, Enum):
    ON = "ON"
    IN = "IN"
    LEFT = "LEFT"
    RIGHT = "RIGHT"
    FRONT = "FRONT"
    BACK = "BACK"
    NEAR = "NEAR"


class NodeKind(str, Enum):
    ROOT = "ROOT"
    REGION = "REGION"
    CARRIER = "CARRIER"


@dataclass(frozen=True)
class PredicateParams:
    near_radius: float = 0.3
    z_tolerance: float = 0.02
    on_overlap: float = 0.25
    in_shrink: float = 0.01
    direction_margin: float = 0.05

    def to_dict(self) -> dict:
        return {
            "near_radius": self.near_radius,
            "z_tolerance": self.z_tolerance,
            "on_overlap": self.on_overlap,
            "in_shrink": self.in_shrink,
            "direction_margin": self.direction_margin,
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> PredicateParams:
        return cls(**(d or {}))


DEFAULT_PARAMS = PredicateParams()


# ---------------------------------------------------------------------------
# predicates


@dataclass(frozen=True)
class Box:
    """Axis-aligned bounds of an oriented box, expressed in the carrier frame."""

    center: tuple[float, float, float]
    half: tuple[float, float, float]

    @classmethod
    def of(cls, pose: Transform, extent) -> Box:
        R = np.abs(pose.R)
        half = R @ np.asarray(extent, dtype=float)
        return cls(tuple(float(v) for v in pose.translation), tuple(float(v) for v in half))


def _near(a: Box, b: Box, p: PredicateParams) -> bool:
    return math.dist(a.center, b.center) <= p.near_radius


def _on(a: Box, b: Box, p: PredicateParams) -> bool:
    (ax, ay, az), (ahx, ahy, ahz) = a.center, a.half
    (bx, by, bz), (bhx, bhy, bhz) = b.center, b.half
    if az <= bz:
        return False
    if abs((az - ahz) - (bz + bhz)) > p.z_tolerance:
        return False
    ox = min(ax + ahx, bx + bhx) - max(ax - ahx, bx - bhx)
    oy = min(ay + ahy, by + bhy) - max(ay - ahy, by - bhy)
    if ox <= 0.0 or oy <= 0.0:
        return False
    return ox * oy >= p.on_overlap * (4.0 * ahx * ahy)


def _in(a: Box, b: Box, p: PredicateParams) -> bool:
    m = p.in_shrink
    for ca, ha, cb, hb in zip(a.center, a.half, b.center, b.half):
        if ca - ha < cb - hb + m or ca + ha > cb + hb - m:
            return False
    return True


def _left(a: Box, b: Box, p: PredicateParams) -> bool:
    dx = b.center[0] - a.center[0]
    return dx > abs(b.center[1] - a.center[1]) and dx > p.direction_margin


def _front(a: Box, b: Box, p: PredicateParams) -> bool:
    dy = b.center[1] - a.center[1]
    return dy > abs(b.center[0] - a.center[0]) and dy > p.direction_margin


_PREDICATES = {
    Relation.NEAR: _near,
    Relation.ON: _on,
    Relation.IN: _in,
    Relation.LEFT: _left,
    Relation.RIGHT: lambda a, b, p: _left(b, a, p),
    Relation.FRONT: _front,
    Relation.BACK: lambda a, b, p: _front(b, a, p),
}


def eval_relation(rel: Relation, a, b, params: PredicateParams = DEFAULT_PARAMS) -> bool:
    """Decide ``rel(a, b)``; ``a`` and ``b`` are ``(pose, extent)`` pairs or :class:`Box`."""
    if not isinstance(a, Box):
        a = Box.of(*a)
    if not isinstance(b, Box):
        b = Box.of(*b)
    return _PREDICATES[Relation(rel)](a, b, params)


def pair_relations(a: Box, b: Box, params: PredicateParams) -> list[Relation]:
    """All relations ``rel(a, b)``; one pass with the same arithmetic as the individual predicates."""
    out = []
    if math.dist(a.center, b.center) <= params.near_radius:
        out.append(Relation.NEAR)
    if _on(a, b, params):
        out.append(Relation.ON)
    if _in(a, b, params):
        out.append(Relation.IN)
    dx = b.center[0] - a.center[0]
    dy = b.center[1] - a.center[1]
    adx, ady, m = abs(dx), abs(dy), params.direction_margin
    if dx > ady and dx > m:
        out.append(Relation.LEFT)
    elif -dx > ady and -dx > m:
        out.append(Relation.RIGHT)
    if dy > adx and dy > m:
        out.append(Relation.FRONT)
    elif -dy > adx and -dy > m:
        out.append(Relation.BACK)
    return out


# ---------------------------------------------------------------------------
# object graph


@dataclass(frozen=True)
class ObjectNode:
    id: str
    category: str
    extent: tuple[float, float, float]
    pose: Transform = Transform()
    state: dict = field(default_factory=dict, compare=True)
    affordances: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.extent) != 3 or any(not (e > 0.0) for e in self.extent):
            raise MalformedDeltaError(f"object {self.id}: extents must be strictly positive")
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))

    @cached_property
    def box(self) -> Box:
        return Box.of(self.pose, self.extent)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "extent": list(self.extent),
            "pose": self.pose.to_dict(),
            "state": dict(self.state),
            "affordances": list(self.affordances),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ObjectNode:
        try:
            return cls(
                id=d["id"],
                category=d["category"],
                extent=tuple(float(v) for v in d["extent"]),
                pose=Transform.from_dict(d["pose"]) if "pose" in d else Transform(),
                state=dict(d.get("state", {})),
                affordances=tuple(d.get("affordances", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDeltaError(f"bad object attributes: {exc}") from exc


Edge = tuple  # (subject id, Relation, object id)


def closure(nodes: dict[str, ObjectNode], params: PredicateParams = DEFAULT_PARAMS) -> frozenset:
    """Brute-force evaluation over all ordered pairs."""
    edges = set()
    items = list(nodes.values())
    for a in items:
        for b in items:
            if a.id == b.id:
                continue
            for rel in pair_relations(a.box, b.box, params):
                edges.add((a.id, rel, b.id))
    return frozenset(edges)


def _incident_edges(node: ObjectNode, others: Iterable[ObjectNode], params: PredicateParams) -> set:
    out = set()
    for o in others:
        if o.id == node.id:
            continue
        for rel in pair_relations(node.box, o.box, params):
            out.add((node.id, rel, o.id))
        for rel in pair_relations(o.box, node.box, params):
            out.add((o.id, rel, node.id))
    return out


@dataclass(frozen=True)
class ObjectGraph:
    nodes: dict = field(default_factory=dict)
    edges: frozenset = frozenset()
    params: PredicateParams = DEFAULT_PARAMS

    def __contains__(self, obj_id: str) -> bool:
        return obj_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def edges_of(self, obj_id: str) -> frozenset:
        return frozenset(e for e in self.edges if e[0] == obj_id or e[2] == obj_id)

    def relations(self, a: str, b: str) -> set:
        return {e[1] for e in self.edges if e[0] == a and e[2] == b}

    def to_dict(self) -> dict:
        return {
            "nodes": {k: v.to_dict() for k, v in self.nodes.items()},
            "edges": sorted([s, r.value, o] for s, r, o in self.edges),
        }

    @classmethod
    def from_dict(cls, d: dict, params: PredicateParams = DEFAULT_PARAMS) -> ObjectGraph:
        nodes = {k: ObjectNode.from_dict(v) for k, v in d.get("nodes", {}).items()}
        edges = frozenset((s, Relation(r), o) for s, r, o in d.get("edges", []))
        return cls(nodes, edges, params)


def add_object(graph: ObjectGraph, node: ObjectNode) -> ObjectGraph:
    if node.id in graph.nodes:
        raise DuplicateObjectError(f"object {node.id} already in graph")
    nodes = dict(graph.nodes)
    nodes[node.id] = node
    new_edges = _incident_edges(node, graph.nodes.values(), graph.params)
    return ObjectGraph(nodes, graph.edges | new_edges, graph.params)


def remove_object(graph: ObjectGraph, obj_id: str) -> ObjectGraph:
    if obj_id not in graph.nodes:
        raise UnknownObjectError(f"object {obj_id} not in graph")
    nodes = dict(graph.nodes)
    del nodes[obj_id]
    edges = frozenset(e for e in graph.edges if e[0] != obj_id and e[2] != obj_id)
    return ObjectGraph(nodes, edges, graph.params)


def move_object(graph: ObjectGraph, obj_id: str, delta: Transform) -> ObjectGraph:
    """Left action ``T <- delta ∘ T`` followed by re-evaluation of incident edges."""
    if obj_id not in graph.nodes:
        raise UnknownObjectError(f"object {obj_id} not in graph")
    if not delta.is_valid():
        raise InvalidTransformError("move delta is not a rigid transform")
    old = graph.nodes[obj_id]
    if delta == Transform():
        return graph
    moved = replace(old, pose=delta.compose(old.pose))
    nodes = dict(graph.nodes)
    nodes[obj_id] = moved
    kept = frozenset(e for e in graph.edges if e[0] != obj_id and e[2] != obj_id)
    others = [n for k, n in nodes.items() if k != obj_id]
    return ObjectGraph(nodes, kept | _incident_edges(moved, others, graph.params), graph.params)


def set_object_state(graph: ObjectGraph, obj_id: str, patch: dict) -> ObjectGraph:
    if obj_id not in graph.nodes:
        raise UnknownObjectError(f"object {obj_id} not in graph")
    old = graph.nodes[obj_id]
    state = dict(old.state)
    state.update(patch)
    nodes = dict(graph.nodes)
    nodes[obj_id] = replace(old, state=state)
    return ObjectGraph(nodes, graph.edges, graph.params)


def observation_filter(node: ObjectNode) -> ObjectNode:
    """Hook for smoothing noisy detections; the simulator reports exact poses."""
    return node


# ---------------------------------------------------------------------------
# scene tree


@dataclass(frozen=True)
class SceneNode:
    id: str
    kind: NodeKind
    name: str
    parent: str | None = None
    position: tuple[float, float] = (0.0, 0.0)
    media: tuple[str, ...] = ()
    category: str = ""
    tags: tuple[str, ...] = ()
    surface: tuple[float, float] = (0.6, 0.4)
    graph: ObjectGraph | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "surface", tuple(float(v) for v in self.surface))

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "kind": self.kind.value,
            "name": self.name,
            "parent": self.parent,
            "position": list(self.position),
            "media": list(self.media),
            "category": self.category,
            "tags": list(self.tags),
        }
        if self.kind is NodeKind.CARRIER:
            d["surface"] = list(self.surface)
            d["graph"] = self.graph.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict, params: PredicateParams = DEFAULT_PARAMS) -> SceneNode:
        kind = NodeKind(d["kind"])
        graph = None
        if kind is NodeKind.CARRIER:
            graph = ObjectGraph.from_dict(d.get("graph", {}), params)
        return cls(
            id=d["id"],
            kind=kind,
            name=d.get("name", d["id"]),
            parent=d.get("parent"),
            position=tuple(float(v) for v in d.get("position", (0.0, 0.0))),
            media=tuple(d.get("media", ())),
            category=d.get("category", ""),
            tags=tuple(d.get("tags", ())),
            surface=tuple(float(v) for v in d.get("surface", (0.6, 0.4))),
            graph=graph,
        )


_PARENT_KIND = {NodeKind.REGION: NodeKind.ROOT, NodeKind.CARRIER: NodeKind.REGION}


@dataclass(frozen=True)
class SceneTree:
    nodes: dict
    root: str
    params: PredicateParams = DEFAULT_PARAMS

    @classmethod
    def empty(cls, root_id: str = "root", media: tuple[str, ...] = (),
              params: PredicateParams = DEFAULT_PARAMS) -> SceneTree:
        return cls({root_id: SceneNode(root_id, NodeKind.ROOT, root_id, media=tuple(media))}, root_id, params)

    # -- derived indexes (computed once per immutable value)

    @cached_property
    def children(self) -> dict:
        ch: dict[str, list[str]] = {k: [] for k in self.nodes}
        for n in self.nodes.values():
            if n.parent is not None:
                ch[n.parent].append(n.id)
        return {k: tuple(sorted(v)) for k, v in ch.items()}

    @cached_property
    def object_index(self) -> dict:
        idx = {}
        for n in self.nodes.values():
            if n.graph is not None:
                for oid in n.graph.nodes:
                    idx[oid] = n.id
        return idx

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def node(self, node_id: str) -> SceneNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"no scene node {node_id}") from None

    def regions(self) -> list[SceneNode]:
        return sorted((n for n in self.nodes.values() if n.kind is NodeKind.REGION), key=lambda n: n.id)

    def carriers(self, region: str | None = None) -> list[SceneNode]:
        out = [n for n in self.nodes.values() if n.kind is NodeKind.CARRIER]
        if region is not None:
            out = [n for n in out if n.parent == region]
        return sorted(out, key=lambda n: n.id)

    def region_of(self, node_id: str) -> str | None:
        n = self.node(node_id)
        if n.kind is NodeKind.REGION:
            return n.id
        if n.kind is NodeKind.CARRIER:
            return n.parent
        return None

    def find_object(self, obj_id: str) -> str | None:
        return self.object_index.get(obj_id)

    def object(self, obj_id: str) -> ObjectNode:
        carrier = self.find_object(obj_id)
        if carrier is None:
            raise UnknownObjectError(f"object {obj_id} not in any carrier graph")
        return self.nodes[carrier].graph.nodes[obj_id]

    def objects(self) -> list[tuple[str, ObjectNode]]:
        return [(c.id, o) for c in self.carriers() for _, o in sorted(c.graph.nodes.items())]

    def node_count(self) -> int:
        return len(self.nodes) + len(self.object_index)

    def _ancestors(self, node_id: str) -> list[str]:
        chain = [node_id]
        while self.nodes[chain[-1]].parent is not None:
            chain.append(self.nodes[chain[-1]].parent)
        return chain

    def hops(self, a: str, b: str) -> int:
        """Tree distance (edges on the unique path)."""
        self.node(a), self.node(b)
        pa, pb = self._ancestors(a), self._ancestors(b)
        common = set(pa) & set(pb)
        return next(i for i, n in enumerate(pa) if n in common) + next(i for i, n in enumerate(pb) if n in common)

    def map_distance(self, a: str, b: str) -> float:
        return math.dist(self.node(a).position, self.node(b).position)

    def route(self, a: str, b: str) -> list[str]:
        """Waypoints from ``a`` (exclusive) to ``b`` (inclusive); regions connect directly, the root is never a stop."""
        self.node(a), self.node(b)
        if a == b:
            return []
        pa, pb = self._ancestors(a), self._ancestors(b)
        common = next(n for n in pa if n in set(pb))
        up = pa[1:pa.index(common) + 1]
        down = list(reversed(pb[:pb.index(common)]))
        return [n for n in up + down if self.nodes[n].kind is not NodeKind.ROOT]

    # -- edits (all return new trees)

    def _with_nodes(self, nodes: dict) -> SceneTree:
        return SceneTree(nodes, self.root, self.params)

    def add_node(self, node: SceneNode) -> SceneTree:
        if node.id in self.nodes or node.id in self.object_index:
            raise DuplicateIdError(f"node id {node.id} already used")
        if node.kind is NodeKind.ROOT:
            raise MalformedDeltaError("a tree has exactly one root")
        parent = self.nodes.get(node.parent)
        if parent is None:
            if node.kind is NodeKind.CARRIER:
                raise OrphanCarrierError(f"carrier {node.id} references unknown region {node.parent}")
            raise UnknownNodeError(f"unknown parent {node.parent}")
        if parent.kind is not _PARENT_KIND[node.kind]:
            if node.kind is NodeKind.CARRIER:
                raise OrphanCarrierError(f"carrier {node.id} must hang under a region")
            raise MalformedDeltaError(f"{node.kind.value} must hang under {_PARENT_KIND[node.kind].value}")
        if node.kind is NodeKind.CARRIER and node.graph is None:
            node = replace(node, graph=ObjectGraph(params=self.params))
        if node.kind is not NodeKind.CARRIER and node.graph is not None:
            raise MalformedDeltaError("only carriers hold object graphs")
        nodes = dict(self.nodes)
        nodes[node.id] = node
        return self._with_nodes(nodes)

    def remove_node(self, node_id: str) -> SceneTree:
        n = self.node(node_id)
        if n.kind is NodeKind.ROOT:
            raise MalformedDeltaError("cannot remove the root")
        if self.children[node_id]:
            raise MalformedDeltaError(f"node {node_id} still has children")
        if n.graph is not None and n.graph.nodes:
            raise MalformedDeltaError(f"carrier {node_id} still holds objects")
        nodes = dict(self.nodes)
        del nodes[node_id]
        return self._with_nodes(nodes)

    def update_node(self, node_id: str, **changes) -> SceneTree:
        allowed = {"name", "position", "media", "tags", "category", "surface"}
        bad = set(changes) - allowed
        if bad:
            raise MalformedDeltaError(f"cannot update fields {sorted(bad)}")
        n = self.node(node_id)
        nodes = dict(self.nodes)
        nodes[node_id] = replace(n, **changes)
        return self._with_nodes(nodes)

    def with_graph(self, carrier: str, graph: ObjectGraph) -> SceneTree:
        n = self.node(carrier)
        if n.kind is not NodeKind.CARRIER:
            raise MalformedDeltaError(f"{carrier} is not a carrier")
        nodes = dict(self.nodes)
        nodes[carrier] = replace(n, graph=graph)
        tree = self._with_nodes(nodes)
        # carry the object index forward instead of rebuilding it
        idx = dict(self.object_index)
        for oid in n.graph.nodes:
            if oid not in graph.nodes:
                del idx[oid]
        for oid in graph.nodes:
            idx[oid] = carrier
        tree.__dict__["object_index"] = idx
        if "children" in self.__dict__:
            tree.__dict__["children"] = self.children
        return tree

    # -- object-level primitives routed to the owning carrier

    def add_object(self, carrier: str, node: ObjectNode) -> SceneTree:
        if node.id in self.object_index or node.id in self.nodes:
            raise DuplicateObjectError(f"object {node.id} already exists")
        return self.with_graph(carrier, add_object(self.node(carrier).graph, node))

    def remove_object(self, obj_id: str) -> SceneTree:
        carrier = self.find_object(obj_id)
        if carrier is None:
            raise UnknownObjectError(f"object {obj_id} not found")
        return self.with_graph(carrier, remove_object(self.nodes[carrier].graph, obj_id))

    def move_object(self, obj_id: str, delta: Transform) -> SceneTree:
        carrier = self.find_object(obj_id)
        if carrier is None:
            raise UnknownObjectError(f"object {obj_id} not found")
        return self.with_graph(carrier, move_object(self.nodes[carrier].graph, obj_id, delta))

    def set_object_state(self, obj_id: str, patch: dict) -> SceneTree:
        carrier = self.find_object(obj_id)
        if carrier is None:
            raise UnknownObjectError(f"object {obj_id} not found")
        return self.with_graph(carrier, set_object_state(self.nodes[carrier].graph, obj_id, patch))

    def validate(self) -> None:
        roots = [n for n in self.nodes.values() if n.kind is NodeKind.ROOT]
        if len(roots) != 1 or roots[0].id != self.root:
            raise MalformedDeltaError("tree must have exactly one root")
        for n in self.nodes.values():
            if n.kind is NodeKind.ROOT:
                continue
            parent = self.nodes.get(n.parent)
            if parent is None or parent.kind is not _PARENT_KIND[n.kind]:
                raise MalformedDeltaError(f"bad parent for {n.id}")
            if (n.graph is not None) != (n.kind is NodeKind.CARRIER):
                raise MalformedDeltaError(f"graph presence mismatch on {n.id}")

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "predicates": self.params.to_dict(),
            "nodes": {k: v.to_dict() for k, v in self.nodes.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneTree:
        params = PredicateParams.from_dict(d.get("predicates"))
        nodes = {k: SceneNode.from_dict(v, params) for k, v in d["nodes"].items()}
        return cls(nodes, d["root"], params)


# ---------------------------------------------------------------------------
# construction and queries


def build_scene_tree(world, params: PredicateParams = DEFAULT_PARAMS) -> SceneTree:
    """Instantiate the tree from a :class:`~stemos.worldspec.WorldSpec` and populate carrier graphs."""
    tree = SceneTree.empty("root", world.root_media, params)
    seen: set[str] = {"root"}

    def claim(node_id: str) -> None:
        if node_id in seen:
            raise DuplicateIdError(f"duplicate id {node_id}")
        seen.add(node_id)

    for r in world.regions:
        claim(r.id)
        tree = tree.add_node(SceneNode(r.id, NodeKind.REGION, r.name, "root", tuple(r.position), tuple(r.media)))
    priors_by_carrier: dict[str, list[str]] = {}
    for cat, carriers in world.priors.items():
        for c in carriers:
            priors_by_carrier.setdefault(c, []).append(cat)
    nodes = dict(tree.nodes)
    for c in world.carriers:
        claim(c.id)
        if c.region not in nodes or nodes[c.region].kind is not NodeKind.REGION:
            raise OrphanCarrierError(f"carrier {c.id} references unknown region {c.region}")
        tags = tuple(sorted(f"stores:{cat}" for cat in priors_by_carrier.get(c.id, ())))
        nodes[c.id] = SceneNode(c.id, NodeKind.CARRIER, c.name, c.region, tuple(c.position),
                                category=c.category, tags=tags, surface=tuple(c.surface),
                                graph=ObjectGraph(params=params))
    by_carrier: dict[str, dict[str, ObjectNode]] = {}
    for o in world.objects:
        claim(o.id)
        if o.carrier not in nodes or nodes[o.carrier].kind is not NodeKind.CARRIER:
            raise UnknownNodeError(f"object {o.id} references unknown carrier {o.carrier}")
        if not o.pose.is_valid():
            raise InvalidTransformError(f"object {o.id} pose is not rigid")
        node = observation_filter(ObjectNode(o.id, o.category, tuple(o.extent), o.pose, dict(o.state),
                                             tuple(o.affordances)))
        by_carrier.setdefault(o.carrier, {})[o.id] = node
    for cid, objs in by_carrier.items():
        nodes[cid] = replace(nodes[cid], graph=ObjectGraph(objs, closure(objs, params), params))
    tree = SceneTree(nodes, "root", params)
    tree.validate()
    return tree


def query_nearby(tree: SceneTree, location: str, hops: int) -> list[SceneNode]:
    """Scene nodes within ``hops`` tree edges of ``location``, sorted by id; carriers carry their graphs.

    The root is a container rather than a place, so it is only reported when it is the query location.
    """
    tree.node(location)
    adj: dict[str, list[str]] = {k: list(v) for k, v in tree.children.items()}
    for n in tree.nodes.values():
        if n.parent is not None:
            adj[n.id].append(n.parent)
    dist = {location: 0}
    queue = deque([location])
    while queue:
        cur = queue.popleft()
        if dist[cur] == hops:
            continue
        for nxt in adj[cur]:
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return [tree.nodes[k] for k in sorted(dist) if k != tree.root or location == tree.root]


def locate_candidates(tree: SceneTree, category: str) -> list[str]:
    """Carriers holding the category first, then carriers whose storage tags admit it."""
    holding = [c.id for c in tree.carriers() if any(o.category == category for o in c.graph.nodes.values())]
    tag = f"stores:{category}"
    prior = [c.id for c in tree.carriers() if tag in c.tags and c.id not in holding]
    return holding + prior
