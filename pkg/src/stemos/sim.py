"""Deterministic mock environment.

The world keeps its own ground-truth scene tree, separate from the robots'
shared memory. Tool calls act on the truth and report outcomes; memory only
learns what the outcomes report, so drift and stale beliefs are possible.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from . import canonical
from .embodiment import ROBOT_KINDS, EmbodimentRegistry, HeartbeatStatus, RobotProfile
from .errors import InvalidPlanError, StemError
from .geometry import Transform
from .planner import GlobalTask, Goal, PlanResult, PlannerContext, Subtask, WorkflowGraph, _with
from .spatial import DEFAULT_PARAMS, NodeKind, ObjectNode, SceneTree, build_scene_tree
from .stem import Event, MemoryState, SpatialDelta, ToolCallRecord, apply_event
from .worldspec import CarrierSpec, ObjectSpec, RegionSpec, WorldSpec

LEVELS = ("L1", "L2", "L3")
DOMAINS = ("HOUSEHOLD", "RESTAURANT", "SUPERMARKET")

# regions, carriers per level and object-count range; the totals (1 + R + C + O)
# land in <20, [20, 30] and [40, 50]
LEVEL_SHAPE = {
    "L1": (2, 4, (8, 12)),
    "L2": (3, 6, (10, 20)),
    "L3": (5, 12, (22, 32)),
}
NODE_BANDS = {"L1": (0, 19), "L2": (20, 30), "L3": (40, 50)}

SMALL = (0.04, 0.04, 0.05)
CONTAINER = (0.14, 0.12, 0.12)

# domain -> (region -> carrier categories, object category -> storage carrier categories)
CATALOG = {
    "HOUSEHOLD": (
        {
            "kitchen": ("fridge", "counter", "cabinet", "stove"),
            "dining_room": ("dining_table", "sideboard"),
            "living_room": ("coffee_table", "tv_stand", "shelf"),
            "bedroom": ("nightstand", "wardrobe", "dresser"),
            "bathroom": ("sink_counter", "bath_shelf"),
            "study": ("desk", "bookshelf"),
        },
        {
            "egg": ("fridge",), "milk": ("fridge",), "butter": ("fridge",), "cheese": ("fridge",),
            "apple": ("counter", "fridge"), "orange": ("counter",), "banana": ("counter",), "bread": ("counter",),
            "knife": ("counter", "cabinet"), "cup": ("cabinet",), "mug": ("cabinet",), "plate": ("cabinet",),
            "bowl": ("cabinet",), "spoon": ("cabinet",), "pan": ("stove",), "pot": ("stove",),
            "kettle": ("stove",), "remote": ("tv_stand", "coffee_table"), "book": ("shelf", "bookshelf", "desk"),
            "magazine": ("coffee_table",), "vase": ("sideboard", "shelf"), "candle": ("sideboard",),
            "napkin": ("dining_table", "sideboard"), "glass": ("cabinet", "dining_table"),
            "lamp": ("nightstand", "desk"), "phone": ("nightstand",), "clock": ("nightstand",),
            "pillow": ("wardrobe",), "sweater": ("wardrobe", "dresser"), "towel": ("bath_shelf",),
            "soap": ("sink_counter",), "toothbrush": ("sink_counter",), "shampoo": ("bath_shelf",),
            "pen": ("desk",), "notebook": ("desk",), "laptop": ("desk",), "charger": ("desk", "nightstand"),
            "bag": ("wardrobe",), "box": ("shelf", "bookshelf"), "gift": ("bookshelf", "dresser"),
            "tissue": ("coffee_table",),
        },
    ),
    "RESTAURANT": (
        {
            "kitchen": ("fridge", "grill", "prep_counter", "pantry_shelf"),
            "dining_hall": ("dining_table", "serving_counter", "side_table"),
            "bar": ("bar_counter", "glass_rack"),
            "storage": ("storage_shelf", "freezer"),
            "entrance": ("host_stand", "coat_rack"),
            "terrace": ("patio_table", "planter_shelf"),
        },
        {
            "bun": ("pantry_shelf",), "patty": ("fridge", "freezer"), "lettuce": ("fridge",),
            "tomato": ("fridge",), "cheese": ("fridge",), "bread": ("pantry_shelf",), "egg": ("fridge",),
            "milk": ("fridge",), "onion": ("pantry_shelf",), "sauce": ("prep_counter",),
            "salt": ("prep_counter",), "pepper": ("prep_counter",), "plate": ("serving_counter",),
            "bowl": ("serving_counter",), "tray": ("serving_counter",), "cup": ("glass_rack",),
            "glass": ("glass_rack",), "wine": ("bar_counter",), "juice": ("fridge", "bar_counter"),
            "soda": ("bar_counter",), "napkin": ("dining_table", "side_table"), "menu": ("host_stand",),
            "fork": ("serving_counter",), "knife": ("prep_counter",), "spoon": ("serving_counter",),
            "pan": ("grill",), "spatula": ("grill",), "ice": ("freezer",), "flour": ("storage_shelf",),
            "rice": ("storage_shelf",), "oil": ("storage_shelf",), "box": ("storage_shelf",),
            "bag": ("host_stand", "coat_rack"), "candle": ("dining_table", "patio_table"),
            "vase": ("host_stand", "planter_shelf"), "lemon": ("bar_counter",), "coffee": ("bar_counter",),
            "tea": ("pantry_shelf",), "umbrella": ("coat_rack",), "flower": ("planter_shelf",),
        },
    ),
    "SUPERMARKET": (
        {
            "produce": ("fruit_stand", "veg_stand", "herb_rack"),
            "dairy": ("dairy_fridge", "cheese_case"),
            "bakery": ("bread_shelf", "cake_case"),
            "aisle_1": ("cereal_shelf", "snack_shelf"),
            "aisle_2": ("drink_shelf", "cleaning_shelf"),
            "checkout": ("checkout_counter", "bagging_counter"),
        },
        {
            "apple": ("fruit_stand",), "orange": ("fruit_stand",), "banana": ("fruit_stand",),
            "grape": ("fruit_stand",), "carrot": ("veg_stand",), "potato": ("veg_stand",),
            "tomato": ("veg_stand",), "lettuce": ("veg_stand",), "basil": ("herb_rack",), "mint": ("herb_rack",),
            "milk": ("dairy_fridge",), "yogurt": ("dairy_fridge",), "butter": ("dairy_fridge",),
            "cheese": ("cheese_case",), "cream": ("dairy_fridge",), "bread": ("bread_shelf",),
            "bagel": ("bread_shelf",), "cake": ("cake_case",), "muffin": ("cake_case",),
            "cereal": ("cereal_shelf",), "oats": ("cereal_shelf",), "chips": ("snack_shelf",),
            "cookies": ("snack_shelf",), "candy": ("snack_shelf",), "water": ("drink_shelf",),
            "juice": ("drink_shelf",), "soda": ("drink_shelf",), "soap": ("cleaning_shelf",),
            "sponge": ("cleaning_shelf",), "detergent": ("cleaning_shelf",), "receipt": ("checkout_counter",),
            "coupon": ("checkout_counter",), "bag": ("bagging_counter",), "box": ("bagging_counter",),
            "gift": ("cake_case", "checkout_counter"), "flower": ("herb_rack",),
        },
    ),
}
CONTAINERS = ("bag", "box")


# ---------------------------------------------------------------------------
# free placement on a carrier surface


def _footprint(pose: Transform, extent) -> tuple:
    R = [[abs(v) for v in pose.rotation[i * 3:i * 3 + 3]] for i in range(3)]
    hx = sum(R[0][k] * extent[k] for k in range(3))
    hy = sum(R[1][k] * extent[k] for k in range(3))
    x, y, _ = pose.translation
    return x - hx, x + hx, y - hy, y + hy


def free_pose(surface, extent, occupied, gap: float = 0.06) -> Transform | None:
    """First grid position on the surface (half-sizes) whose footprint clears every occupied footprint by ``gap``."""
    sx, sy = surface
    ex, ey, ez = extent
    step = 0.05
    nx = int((2 * (sx - ex)) / step) + 1
    ny = int((2 * (sy - ey)) / step) + 1
    for j in range(ny):
        y = round(-sy + ey + j * step, 10)
        for i in range(nx):
            x = round(-sx + ex + i * step, 10)
            box = (x - ex, x + ex, y - ey, y + ey)
            if all(box[1] + gap <= o[0] or o[1] + gap <= box[0] or box[3] + gap <= o[2] or o[3] + gap <= box[2]
                   for o in occupied):
                return Transform.from_translation(x, y, ez)
    return None


# ---------------------------------------------------------------------------
# world generation


def _object_spec(oid: str, carrier: str, category: str, pose: Transform) -> ObjectSpec:
    if category in CONTAINERS:
        return ObjectSpec(oid, carrier, category, CONTAINER, pose, {"open": False}, ("container", "openable"))
    return ObjectSpec(oid, carrier, category, SMALL, pose, {}, ("graspable",))


def generate_world(domain: str = "HOUSEHOLD", level: str = "L1", seed: int = 0) -> WorldSpec:
    if level not in LEVEL_SHAPE:
        raise InvalidPlanError(f"unknown level {level}")
    domain = domain.upper()
    if domain not in CATALOG:
        raise InvalidPlanError(f"unknown domain {domain}")
    regions_cat, objects_cat = CATALOG[domain]
    rng = random.Random(f"world:{domain}:{level}:{seed}")
    n_regions, n_carriers, (lo, hi) = LEVEL_SHAPE[level]
    region_names = rng.sample(sorted(regions_cat), n_regions)
    regions = []
    for i, name in enumerate(region_names):
        regions.append(RegionSpec(name, name.replace("_", " "), (8.0 * (i % 3), 8.0 * (i // 3)),
                                  (f"views/{name}/0.png", f"views/{name}/1.png")))
    # every region gets at least two carriers; the rest are spread round-robin
    counts = {r: 2 for r in region_names}
    for k in range(n_carriers - 2 * n_regions):
        counts[region_names[k % n_regions]] += 1
    carriers = []
    used: dict[str, int] = {}
    for ri, r in enumerate(regions):
        kinds = list(regions_cat[r.id])
        rng.shuffle(kinds)
        for k in range(counts[r.id]):
            cat = kinds[k % len(kinds)]
            used[cat] = used.get(cat, 0) + 1
            cid = cat if used[cat] == 1 else f"{cat}_{used[cat]}"
            ang = 2 * math.pi * k / counts[r.id]
            pos = (round(r.position[0] + 2.0 * math.cos(ang), 6), round(r.position[1] + 2.0 * math.sin(ang), 6))
            carriers.append(CarrierSpec(cid, cid.replace("_", " "), cat, r.id, pos))
    by_cat: dict[str, list[str]] = {}
    for c in carriers:
        by_cat.setdefault(c.category, []).append(c.id)
    priors = {}
    for obj, homes in sorted(objects_cat.items()):
        ids = [cid for h in homes for cid in by_cat.get(h, ())]
        if ids:
            priors[obj] = ids
    n_objects = rng.randint(lo, hi)
    pool = sorted(objects_cat)
    rng.shuffle(pool)
    # prefer categories that have a storage prior in this world
    pool.sort(key=lambda c: c not in priors)
    chosen = pool[:n_objects]
    occupied: dict[str, list] = {c.id: [] for c in carriers}
    surfaces = {c.id: c.surface for c in carriers}
    objects = []
    for cat in chosen:
        homes = priors.get(cat, [])
        if homes and rng.random() < 0.8:
            order = [rng.choice(homes)]
        else:
            order = [rng.choice(carriers).id]
        order += sorted(occupied, key=lambda c: (len(occupied[c]), c))
        extent = CONTAINER if cat in CONTAINERS else SMALL
        for cid in order:
            pose = free_pose(surfaces[cid], extent, occupied[cid])
            if pose is not None:
                occupied[cid].append(_footprint(pose, extent))
                objects.append(_object_spec(f"{cat}_1", cid, cat, pose))
                break
    return WorldSpec(domain, regions, carriers, objects, priors, level, seed)


def in_band(count: int, level: str) -> bool:
    lo, hi = NODE_BANDS[level]
    return lo <= count <= hi


# ---------------------------------------------------------------------------
# ground truth and tools


@dataclass
class RobotBody:
    id: str
    kind: str
    loc: str
    tools: set
    holding: str | None = None
    broken: set = field(default_factory=set)
    offline_from: int | None = None
    offline_until: float | None = None
    resources: dict = field(default_factory=lambda: {"battery": 100.0, "cpu": 5.0, "net": 100.0})
    home: str | None = None

    def __post_init__(self):
        if self.home is None:
            self.home = self.loc

    def offline(self, now: int) -> bool:
        return self.offline_from is not None and self.offline_from <= now < self.offline_until

    def profile(self, tick: int = 0) -> RobotProfile:
        return RobotProfile(self.id, self.loc, frozenset(self.tools), dict(self.resources),
                            {"rgb": f"cam/{self.id}/latest"}, last_heartbeat=tick, holding=self.holding,
                            kind=self.kind)


@dataclass(frozen=True)
class ToolOutcome:
    status: str
    feedback: str
    spatial: tuple = ()
    embodiment: dict = field(default_factory=dict)
    observation: tuple | None = None
    duration: int = 1

    @property
    def ok(self) -> bool:
        return self.status == "OK"


def _fail(code: str, text: str) -> ToolOutcome:
    return ToolOutcome("FAIL", f"{code}: {text}")


class FaultMode:
    NONE = "NONE"
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"


@dataclass(frozen=True)
class FaultPlan:
    mode: str = FaultMode.NONE
    trigger: int = 0
    robot: str | None = None
    tool: str | None = None
    persistence: str = "persistent"
    duration: int = 0
    task: str | None = None

    def to_dict(self) -> dict:
        return {"mode": self.mode, "trigger": self.trigger, "robot": self.robot, "tool": self.tool,
                "persistence": self.persistence, "duration": self.duration, "task": self.task}

    @classmethod
    def from_dict(cls, d: dict | None) -> FaultPlan:
        d = d or {}
        return cls(d.get("mode", "NONE").upper(), int(d.get("trigger", 0)), d.get("robot"), d.get("tool"),
                   d.get("persistence", "persistent"), int(d.get("duration", 0)), d.get("task"))


class World:
    """Ground truth plus robot bodies; owned by the tick loop."""

    def __init__(self, spec: WorldSpec, bodies: list[RobotBody], seed: int = 0, drift_prob: float = 0.0):
        self.spec = spec
        self.truth: SceneTree = build_scene_tree(spec)
        self.bodies: dict[str, RobotBody] = {b.id: b for b in bodies}
        self.tick = 0
        self.rng = random.Random(f"world-run:{seed}")
        self.drift_prob = drift_prob
        self.faults: list[FaultPlan] = []
        self.fired: set[int] = set()
        self.held: dict[str, ObjectNode] = {}

    def reset(self) -> None:
        """Objects back to their generated poses, robots back home with empty grippers; faults persist."""
        self.truth = build_scene_tree(self.spec)
        self.held.clear()
        for b in self.bodies.values():
            b.loc, b.holding = b.home, None

    # -- clock and faults

    def advance_tick(self) -> int:
        self.tick += 1
        return self.tick

    def inject_fault(self, plan: FaultPlan) -> None:
        if plan.mode not in (FaultMode.NONE, FaultMode.E1, FaultMode.E2, FaultMode.E3):
            raise InvalidPlanError(f"unknown fault mode {plan.mode}")
        if plan.mode in (FaultMode.E1, FaultMode.E2) and plan.robot not in self.bodies:
            raise InvalidPlanError(f"fault targets unknown robot {plan.robot}")
        if plan.mode == FaultMode.E2 and plan.tool not in self.bodies[plan.robot].tools:
            raise InvalidPlanError(f"{plan.robot} has no {plan.tool} to break")
        if plan.mode == FaultMode.E1 and plan.persistence == "transient" and plan.duration <= 0:
            raise InvalidPlanError("transient outage needs a positive duration")
        if plan.mode != FaultMode.NONE:
            self.faults.append(plan)

    def fire_faults(self, now: int) -> list[FaultPlan]:
        fired = []
        for i, f in enumerate(self.faults):
            if i in self.fired or f.trigger > now or f.mode == FaultMode.E3:
                continue
            self.fired.add(i)
            body = self.bodies[f.robot]
            if f.mode == FaultMode.E1:
                body.offline_from = now
                body.offline_until = now + f.duration if f.persistence == "transient" else math.inf
            elif f.mode == FaultMode.E2:
                if f.tool in body.tools:
                    body.broken.add(f.tool)
            fired.append(f)
        return fired

    def heartbeats(self, now: int, interval: int) -> list[HeartbeatStatus]:
        if now % interval:
            return []
        return [HeartbeatStatus(b.id, now, dict(b.resources), {"rgb": f"cam/{b.id}/{now}"})
                for _, b in sorted(self.bodies.items()) if not b.offline(now)]

    def drift(self) -> tuple[str, str, str] | None:
        """With probability ``drift_prob`` an unobserved agent moves one object to another carrier."""
        if self.drift_prob <= 0 or self.rng.random() >= self.drift_prob:
            return None
        objs = self.truth.objects()
        if not objs:
            return None
        src, node = self.rng.choice(objs)
        dests = [c.id for c in self.truth.carriers() if c.id != src]
        dst = self.rng.choice(dests)
        pose = self._free(dst, node.extent)
        if pose is None:
            return None
        self.truth = self.truth.remove_object(node.id).add_object(dst, replace(node, pose=pose))
        return node.id, src, dst

    # -- queries

    def _free(self, carrier: str, extent) -> Transform | None:
        c = self.truth.node(carrier)
        occupied = [_footprint(o.pose, o.extent) for o in c.graph.nodes.values()]
        return free_pose(c.surface, extent, occupied)

    def location_of(self, obj: str) -> str | None:
        c = self.truth.find_object(obj)
        if c is not None:
            return c
        for b in self.bodies.values():
            if b.holding == obj:
                return f"robot:{b.id}"
        return None

    def holds(self, condition) -> bool:
        kind = condition[0]
        if kind == "on":
            return self.truth.find_object(condition[1]) == condition[2]
        if kind == "in":
            obj, box = condition[1], condition[2]
            carrier = self.truth.find_object(obj)
            return carrier is not None and carrier == self.truth.find_object(box) and \
                "IN" in {r.value for r in self.truth.node(carrier).graph.relations(obj, box)}
        if kind == "state":
            carrier = self.truth.find_object(condition[1])
            return carrier is not None and self.truth.object(condition[1]).state.get(condition[2]) == condition[3]
        raise InvalidPlanError(f"unknown goal condition {kind}")

    def check_conservation(self) -> bool:
        placed = list(self.truth.object_index)
        held = [b.holding for b in self.bodies.values() if b.holding]
        return len(placed) + len(held) == len(set(placed) | set(held))

    # -- tools

    def invoke_tool(self, robot: str, tool: str, args: dict) -> ToolOutcome:
        body = self.bodies[robot]
        if tool not in body.tools:
            return _fail("CAPABILITY_MISSING", f"{robot} has no {tool}")
        if tool in body.broken:
            return _fail("TOOL_BROKEN", f"{tool} malfunction on {robot}")
        handler = getattr(self, f"_tool_{tool}", None)
        if handler is None:
            return _fail("CAPABILITY_MISSING", f"unknown tool {tool}")
        return handler(body, **args)

    def _tool_wait(self, body: RobotBody) -> ToolOutcome:
        return ToolOutcome("OK", "waited")

    def _tool_navigate(self, body: RobotBody, target: str) -> ToolOutcome:
        node = self.truth.nodes.get(target)
        if node is None or node.kind is NodeKind.ROOT:
            return _fail("UNKNOWN_LOCATION", f"no place named {target}")
        if body.loc == target:
            return ToolOutcome("OK", f"already at {target}")
        nxt = self.truth.route(body.loc, target)[0]
        body.loc = nxt
        text = f"reached {target}" if nxt == target else f"moving to {target}, now at {nxt}"
        return ToolOutcome("OK", text, embodiment={body.id: {"location": nxt}})

    def _carrier(self, body: RobotBody):
        n = self.truth.nodes.get(body.loc)
        return n if n is not None and n.kind is NodeKind.CARRIER else None

    def _tool_detect(self, body: RobotBody, category: str | None = None) -> ToolOutcome:
        c = self._carrier(body)
        if c is None:
            return _fail("NOT_FOUND", f"nothing to detect at {body.loc}")
        seen = tuple(sorted(c.graph.nodes.values(), key=lambda o: o.id))
        hits = [o.id for o in seen if category is None or o.category == category]
        obs = (c.id, seen)
        if not hits:
            what = category or "object"
            return ToolOutcome("FAIL", f"NOT_FOUND: no {what} detected on {c.id}", observation=obs)
        return ToolOutcome("OK", "detected " + ", ".join(hits), observation=obs)

    def _tool_pick(self, body: RobotBody, object: str) -> ToolOutcome:
        if body.holding == object:
            return ToolOutcome("OK", f"already holding {object}")
        if body.holding is not None:
            return _fail("GRIPPER_FULL", f"{body.id} already holds {body.holding}")
        c = self._carrier(body)
        if c is None or object not in c.graph.nodes:
            return _fail("NOT_FOUND", f"{object} is not at {body.loc}")
        # a held object keeps its intrinsic attributes so it can be placed again
        self.held[object] = c.graph.nodes[object]
        self.truth = self.truth.remove_object(object)
        body.holding = object
        return ToolOutcome("OK", f"picked {object}", (SpatialDelta.remove(object),), {body.id: {"holding": object}})

    def _tool_place(self, body: RobotBody, target: str, inside: str | None = None,
                    object: str | None = None) -> ToolOutcome:
        if body.holding is None or object not in (None, body.holding):
            return _fail("NOT_HOLDING", f"{body.id} does not hold {object or 'anything'}")
        if target not in self.truth.nodes or self.truth.nodes[target].kind is not NodeKind.CARRIER:
            return _fail("UNKNOWN_LOCATION", f"no carrier named {target}")
        if body.loc != target:
            return _fail("NOT_CO_LOCATED", f"{body.id} is at {body.loc}, not {target}")
        obj = body.holding
        node = self.held[obj]
        if inside is not None:
            graph = self.truth.node(target).graph
            box = graph.nodes.get(inside)
            if box is None:
                return _fail("NOT_FOUND", f"{inside} is not on {target}")
            if not box.state.get("open", True):
                return _fail("CONTAINER_CLOSED", f"{inside} is closed")
            bx, by, bz = box.pose.translation
            hb, ha = box.box.half[2], node.extent[2]
            if any(2 * a + 2 * DEFAULT_PARAMS.in_shrink + 0.002 > 2 * b for a, b in zip(node.extent, box.box.half)):
                return _fail("NO_SPACE", f"{obj} does not fit in {inside}")
            pose = Transform.from_translation(bx, by, bz - hb + DEFAULT_PARAMS.in_shrink + ha + 0.001)
        else:
            pose = self._free(target, node.extent)
            if pose is None:
                return _fail("NO_SPACE", f"no free space on {target}")
        placed = replace(node, pose=pose)
        self.truth = self.truth.add_object(target, placed)
        del self.held[obj]
        body.holding = None
        text = f"placed {obj} in {inside}" if inside else f"placed {obj} on {target}"
        return ToolOutcome("OK", text, (SpatialDelta.add(target, placed),), {body.id: {"holding": None}})

    def _toggle(self, body: RobotBody, object: str, value: bool) -> ToolOutcome:
        c = self._carrier(body)
        if c is None or object not in c.graph.nodes:
            return _fail("NOT_FOUND", f"{object} is not at {body.loc}")
        node = c.graph.nodes[object]
        if "openable" not in node.affordances:
            return _fail("NOT_OPENABLE", f"{object} cannot be opened")
        verb = "opened" if value else "closed"
        if node.state.get("open") == value:
            return ToolOutcome("OK", f"{object} already {verb}")
        self.truth = self.truth.set_object_state(object, {"open": value})
        return ToolOutcome("OK", f"{verb} {object}", (SpatialDelta.set_state(object, {"open": value}),))

    def _tool_open(self, body: RobotBody, object: str) -> ToolOutcome:
        return self._toggle(body, object, True)

    def _tool_close(self, body: RobotBody, object: str) -> ToolOutcome:
        return self._toggle(body, object, False)

    def _tool_handover(self, body: RobotBody, to: str) -> ToolOutcome:
        other = self.bodies.get(to)
        if other is None:
            return _fail("NOT_FOUND", f"no robot {to}")
        if body.holding is None:
            return _fail("NOT_HOLDING", f"{body.id} holds nothing")
        if other.loc != body.loc or other.offline(self.tick):
            return _fail("NOT_CO_LOCATED", f"{to} is not beside {body.id}")
        if other.holding is not None:
            return _fail("GRIPPER_FULL", f"{to} already holds {other.holding}")
        obj = body.holding
        body.holding, other.holding = None, obj
        return ToolOutcome("OK", f"handed {obj} to {to}", (), {body.id: {"holding": None}, to: {"holding": obj}})


# ---------------------------------------------------------------------------
# teams


def make_team(kinds: list[str], spec: WorldSpec, spread: bool = True) -> list[RobotBody]:
    """Robots named ``r1..rn``; with ``spread`` they start in different regions, round-robin."""
    regions = [r.id for r in spec.regions]
    out = []
    for i, kind in enumerate(kinds):
        if kind not in ROBOT_KINDS:
            raise InvalidPlanError(f"unknown robot kind {kind}")
        loc = regions[i % len(regions)] if spread else regions[0]
        out.append(RobotBody(f"r{i + 1}", kind, loc, set(ROBOT_KINDS[kind])))
    return out


def initial_memory(world: World, tick: int = 0) -> tuple[MemoryState, list]:
    """Memory seeded with the scanned scene tree; robot registrations are returned as pending deltas."""
    state = MemoryState.initial(world.spec and build_scene_tree(world.spec))
    registry = EmbodimentRegistry()
    deltas = []
    for _, b in sorted(world.bodies.items()):
        d = registry.register_robot(b.profile(tick), state.spatial)
        registry = registry.apply(d, state.spatial)
        deltas.append(d)
    return state, deltas


# ---------------------------------------------------------------------------
# task generation


@dataclass(frozen=True)
class ScenarioTask:
    task: GlobalTask
    goal: tuple

    def to_dict(self) -> dict:
        return {"task": self.task.to_dict(), "goal": [list(c) for c in self.goal]}

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioTask:
        return cls(GlobalTask.from_dict(d["task"]), tuple(tuple(c) for c in d.get("goal", ())))


def _article(word: str) -> str:
    return "an" if word[0] in "aeiou" else "a"


def _graspable(spec: WorldSpec) -> list[ObjectSpec]:
    return [o for o in spec.objects if o.category not in CONTAINERS]


def fetch_task(spec: WorldSpec, rng: random.Random, task_id: str, n_items: int = 1, arrival: int = 0,
               **meta) -> ScenarioTask:
    objs = rng.sample(_graspable(spec), n_items)
    sources = {o.carrier for o in objs}
    dests = [c.id for c in spec.carriers if c.id not in sources]
    dest = rng.choice(dests)
    names = [f"{_article(o.category)} {o.category}" for o in objs]
    items = names[0] if len(names) == 1 else ", ".join(names[:-1]) + " and " + names[-1]
    task = GlobalTask(task_id, f"bring {items} to {dest}", "fetch" if n_items == 1 else "gather", arrival, **meta)
    return ScenarioTask(task, tuple(("on", o.id, dest) for o in objs))


def followup_task(spec: WorldSpec, rng: random.Random, task_id: str, chain: tuple, current: str,
                  previous: str, arrival: int = 0, **meta) -> ScenarioTask:
    dest = rng.choice([c.id for c in spec.carriers if c.id != current])
    ref = "it" if len(chain) == 1 else "them"
    task = GlobalTask(task_id, f"now take {ref} to {dest}", "deliver", arrival, previous=previous, **meta)
    return ScenarioTask(task, tuple(("on", o, dest) for o in chain))


def lifelong_sequence(spec: WorldSpec, rng: random.Random, seq_id: str, sq: int, n_items: int) -> list[ScenarioTask]:
    """A head fetch/gather task followed by ``sq - 1`` follow-ups that refer back to the delivered items."""
    meta = dict(sequence=seq_id, sq_len=sq, level=spec.level, domain=spec.domain)
    head = fetch_task(spec, rng, f"{seq_id}.t1", n_items, sq_index=1, **meta)
    out = [head]
    chain = tuple(c[1] for c in head.goal)
    current = head.goal[0][2]
    for k in range(2, sq + 1):
        nxt = followup_task(spec, rng, f"{seq_id}.t{k}", chain, current, out[-1].task.id, sq_index=k, **meta)
        current = nxt.goal[0][2]
        out.append(nxt)
    return out


def serve_task(spec: WorldSpec, rng: random.Random, task_id: str, dish: str, ingredients, dest: str,
               arrival: int = 0, **meta) -> ScenarioTask:
    ids = [o.id for o in spec.objects if o.category in ingredients]
    return ScenarioTask(GlobalTask(task_id, f"prepare {_article(dish)} {dish} and serve it to {dest}",
                                   "prepare_serve", arrival, **meta), tuple(("on", o, dest) for o in ids))


def package_task(spec: WorldSpec, task_id: str, item: str, container: str, arrival: int = 0, **meta) -> ScenarioTask:
    obj = next(o.id for o in spec.objects if o.category == item)
    box = next(o.id for o in spec.objects if o.category == container)
    return ScenarioTask(GlobalTask(task_id, f"pack the {item} into the {container}", "package", arrival, **meta),
                        (("in", obj, box),))


def random_graph(task_id: str, robots, rng: random.Random, max_depth: int = 4, max_width: int = 3,
                 max_wait: int = 5, collab_prob: float = 0.25) -> WorkflowGraph:
    """Layered graph of wait subtasks; some subtasks need two robots at once."""
    robots = sorted(robots)
    subtasks = []
    for depth in range(1, rng.randint(1, max_depth) + 1):
        for _ in range(rng.randint(1, max_width)):
            k = 2 if len(robots) > 1 and rng.random() < collab_prob else 1
            team = tuple(sorted(rng.sample(robots, k)))
            roles = {r: (Goal("wait", count=rng.randint(1, max_wait)),) for r in team}
            subtasks.append(Subtask(f"{task_id}/s{len(subtasks) + 1}", f"hold for {depth}", depth, team, roles))
    return WorkflowGraph(task_id, tuple(subtasks))


# ---------------------------------------------------------------------------
# hallucination fixture


class HallucinatingPlanner:
    """Wraps a planner; the first plan for each targeted task sends its first goal to a place that does not exist."""

    def __init__(self, inner, tasks, location: str = "room_99"):
        self.inner = inner
        self.tasks = set(tasks)
        self.location = location
        self.corrupted: set[str] = set()

    def plan(self, ctx: PlannerContext) -> PlanResult:
        result = self.inner.plan(ctx)
        if ctx.task not in self.tasks or ctx.task in self.corrupted:
            return result
        self.corrupted.add(ctx.task)
        subtasks = list(result.graph.subtasks)
        s = subtasks[0]
        robot = s.robots[0]
        goals = list(s.roles[robot])
        goals[0] = _with(goals[0], dest=self.location)
        roles = dict(s.roles)
        roles[robot] = tuple(goals)
        subtasks[0] = Subtask(s.id, f"{s.description} (via {self.location})", s.depth, s.robots, roles)
        graph = WorkflowGraph(result.graph.task, tuple(subtasks), result.graph.generation)
        return PlanResult(result.trace + (f"route through {self.location}",), graph)


# ---------------------------------------------------------------------------
# random event scripts


def random_events(state: MemoryState, n: int, seed: int, start_tau: int = 0) -> tuple[list[Event], MemoryState]:
    """A valid ``n``-event script against ``state`` covering every delta variant."""
    rng = random.Random(f"events:{seed}")
    events = []
    tau = start_tau
    fresh = 0
    robot_n = len(state.embodiment.robots)
    for _ in range(n):
        tree, reg = state.spatial, state.embodiment
        tau += rng.choice((0, 0, 1, 2))
        objs = list(tree.object_index)
        carriers = [c.id for c in tree.carriers()]
        robots = sorted(reg.robots)
        roll = rng.random()
        spatial = embodiment = None
        log = ()
        if roll < 0.22 or not objs:
            fresh += 1
            ext = (rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.1))
            pose = Transform.from_yaw(rng.uniform(-math.pi, math.pi), rng.uniform(-0.5, 0.5),
                                      rng.uniform(-0.5, 0.5), rng.uniform(0.0, 0.4))
            node = ObjectNode(f"obj_{seed}_{fresh}", rng.choice(("cup", "plate", "egg", "box")), ext, pose,
                              {"open": rng.random() < 0.5})
            spatial = SpatialDelta.add(rng.choice(carriers), node)
        elif roll < 0.34:
            spatial = SpatialDelta.remove(rng.choice(objs))
        elif roll < 0.58:
            T = Transform.from_rotvec([rng.gauss(0, 0.3) for _ in range(3)],
                                      [rng.gauss(0, 0.15), rng.gauss(0, 0.15), rng.gauss(0, 0.05)])
            spatial = SpatialDelta.move(rng.choice(objs), T)
        elif roll < 0.64:
            spatial = SpatialDelta.set_state(rng.choice(objs), {"open": rng.random() < 0.5})
        elif roll < 0.68:
            spatial = SpatialDelta.tree_update(rng.choice(carriers), name=f"renamed {rng.randint(0, 99)}")
        elif roll < 0.72 or not robots:
            robot_n += 1
            loc = rng.choice(carriers)
            embodiment = reg.register_robot(RobotProfile(f"bot{robot_n}", loc, frozenset({"navigate", "pick"})), tree)
        elif roll < 0.84:
            r = rng.choice(robots)
            prof = reg.robots[r]
            embodiment = reg.heartbeat(HeartbeatStatus(r, max(tau, prof.last_heartbeat),
                                                       {"battery": round(rng.uniform(0, 100), 3)}), tau)
        elif roll < 0.90:
            r = rng.choice(robots)
            tool = rng.choice(("grasp", "open", "navigate"))
            if tool in reg.robots[r].capabilities:
                embodiment = reg.hotplug_tool(r, tool, attach=False)
            else:
                embodiment = reg.hotplug_tool(r, tool, attach=True)
        elif roll < 0.94:
            r = rng.choice(robots)
            embodiment = reg.sweep_offline(tau + 100)[0] if reg.sweep_offline(tau + 100) else None
            if embodiment is None:
                _, embodiment = reg.snap_localization(r, (rng.uniform(-2, 20), rng.uniform(-2, 20)), tree)
        if spatial is None and embodiment is None or rng.random() < 0.3:
            ok = rng.random() < 0.7
            log = (ToolCallRecord(rng.choice(("navigate", "detect", "pick", "place")), {"n": rng.randint(0, 9)},
                                  "OK" if ok else "FAIL", "" if ok else "NOT_FOUND: nothing there",
                                  robots[0] if robots else None),)
        e = Event(state.version + 1, tau, spatial, embodiment, f"g{rng.randint(1, 5)}",
                  tuple(f"s{k}" for k in range(rng.randint(0, 2))), log)
        state = apply_event(state, e)
        events.append(e)
    return events, state


def dumps_spec(spec: WorldSpec) -> str:
    return canonical.dumps(spec.to_dict())


__all__ = [
    "CATALOG", "DOMAINS", "LEVELS", "NODE_BANDS", "FaultMode", "FaultPlan", "HallucinatingPlanner", "RobotBody",
    "ScenarioTask", "ToolOutcome", "World", "fetch_task", "followup_task", "free_pose", "generate_world",
    "in_band", "initial_memory", "lifelong_sequence", "make_team", "package_task", "random_events", "random_graph",
    "serve_task",
    "StemError",
]
