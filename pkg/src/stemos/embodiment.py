"""Embodiment memory: per-robot profiles refreshed by heartbeats.

Registry methods never mutate; they validate a request against the current
roster and return :class:`EmbodimentDelta` values. Deltas only take effect when
the memory core applies them as events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import (
    DetachMissingToolError,
    DuplicateRobotError,
    MalformedDeltaError,
    StaleTickError,
    UnknownLocationError,
    UnknownRobotError,
)
from .spatial import NodeKind, SceneTree

HEARTBEAT_INTERVAL = 5
OFFLINE_THRESHOLD = 3 * HEARTBEAT_INTERVAL

FIELDS = ("location", "capabilities", "resources", "sensors", "availability", "last_heartbeat", "holding")
RESOURCE_KEYS = ("battery", "cpu", "net")

SKILLS = ("navigate", "detect", "pick", "place", "open", "close", "handover", "wait")
_MOBILE = frozenset(SKILLS)
ROBOT_KINDS = {
    "wheeled": _MOBILE,
    "humanoid": _MOBILE,
    "quadruped": frozenset({"navigate", "detect", "pick", "place", "handover", "wait"}),
    "dual_arm": frozenset({"detect", "pick", "place", "open", "close", "handover", "wait"}),
    "single_arm": frozenset({"detect", "pick", "place", "handover", "wait"}),
}


class Availability(str, Enum):
    IDLE = "IDLE"
    BUSY = "BUSY"
    OFFLINE = "OFFLINE"


@dataclass(frozen=True)
class RobotProfile:
    id: str
    loc: str
    capabilities: frozenset = frozenset()
    resources: dict = field(default_factory=lambda: {"battery": 100.0, "cpu": 0.0, "net": 100.0})
    sensors: dict = field(default_factory=dict)
    availability: Availability = Availability.IDLE
    last_heartbeat: int = 0
    holding: str | None = None
    kind: str = "wheeled"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "location": self.loc,
            "capabilities": sorted(self.capabilities),
            "resources": dict(self.resources),
            "sensors": dict(self.sensors),
            "availability": self.availability.value,
            "last_heartbeat": self.last_heartbeat,
            "holding": self.holding,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RobotProfile:
        return cls(
            id=d["id"],
            kind=d.get("kind", "wheeled"),
            loc=d["location"],
            capabilities=frozenset(d.get("capabilities", ())),
            resources=dict(d.get("resources", {"battery": 100.0, "cpu": 0.0, "net": 100.0})),
            sensors=dict(d.get("sensors", {})),
            availability=Availability(d.get("availability", "IDLE")),
            last_heartbeat=int(d.get("last_heartbeat", 0)),
            holding=d.get("holding"),
        )


@dataclass(frozen=True)
class HeartbeatStatus:
    robot: str
    tick: int
    resources: dict = field(default_factory=dict)
    sensors: dict = field(default_factory=dict)
    claim: Availability = Availability.IDLE


@dataclass(frozen=True)
class EmbodimentDelta:
    """A typed change to one robot. ``op == "register"`` creates the profile."""

    robot: str
    changed: frozenset
    payload: dict
    op: str = "update"

    def __post_init__(self):
        if not self.changed:
            raise MalformedDeltaError("embodiment delta changes nothing")
        if set(self.payload) != set(self.changed):
            raise MalformedDeltaError("payload keys must equal the changed set")
        unknown = set(self.changed) - set(FIELDS) - {"kind"}
        if unknown:
            raise MalformedDeltaError(f"unknown embodiment fields {sorted(unknown)}")
        if self.op not in ("update", "register"):
            raise MalformedDeltaError(f"unknown op {self.op}")

    def to_dict(self) -> dict:
        payload = dict(self.payload)
        if "capabilities" in payload:
            payload["capabilities"] = sorted(payload["capabilities"])
        return {"robot": self.robot, "op": self.op, "changed": sorted(self.changed), "payload": payload}

    @classmethod
    def from_dict(cls, d: dict) -> EmbodimentDelta:
        try:
            return cls(d["robot"], frozenset(d["changed"]), dict(d["payload"]), d.get("op", "update"))
        except (KeyError, TypeError) as exc:
            raise MalformedDeltaError(f"bad embodiment delta: {exc}") from exc


def _delta(robot: str, **payload) -> EmbodimentDelta:
    return EmbodimentDelta(robot, frozenset(payload), payload)


def _check_resources(res: dict) -> dict:
    out = {}
    for k, v in res.items():
        v = float(v)
        if not 0.0 <= v <= 100.0:
            raise MalformedDeltaError(f"resource {k}={v} outside [0, 100]")
        out[k] = v
    return out


@dataclass(frozen=True)
class EmbodimentRegistry:
    robots: dict = field(default_factory=dict)
    heartbeat_interval: int = HEARTBEAT_INTERVAL
    offline_threshold: int = OFFLINE_THRESHOLD

    def __contains__(self, robot_id: str) -> bool:
        return robot_id in self.robots

    def __len__(self) -> int:
        return len(self.robots)

    def get(self, robot_id: str) -> RobotProfile:
        try:
            return self.robots[robot_id]
        except KeyError:
            raise UnknownRobotError(f"no robot {robot_id}") from None

    def roster(self) -> list[RobotProfile]:
        return [self.robots[k] for k in sorted(self.robots)]

    # -- requests producing deltas

    def register_robot(self, profile: RobotProfile, tree: SceneTree | None = None) -> EmbodimentDelta:
        if profile.id in self.robots:
            raise DuplicateRobotError(f"robot {profile.id} already registered")
        if tree is not None:
            node = tree.nodes.get(profile.loc)
            if node is None or node.kind is NodeKind.ROOT:
                raise UnknownLocationError(f"robot {profile.id} location {profile.loc} is not a region or carrier")
        payload = {
            "kind": profile.kind,
            "location": profile.loc,
            "capabilities": frozenset(profile.capabilities),
            "resources": _check_resources(profile.resources),
            "sensors": dict(profile.sensors),
            "availability": Availability.IDLE.value,
            "last_heartbeat": int(profile.last_heartbeat),
            "holding": profile.holding,
        }
        return EmbodimentDelta(profile.id, frozenset(payload), payload, op="register")

    def heartbeat(self, status: HeartbeatStatus, now: int) -> EmbodimentDelta:
        r = self.get(status.robot)
        if status.tick < r.last_heartbeat:
            raise StaleTickError(f"heartbeat tick {status.tick} < last {r.last_heartbeat} for {r.id}")
        payload = {"last_heartbeat": int(status.tick)}
        if status.resources:
            payload["resources"] = _check_resources({**r.resources, **status.resources})
        if status.sensors:
            payload["sensors"] = {**r.sensors, **status.sensors}
        if r.availability is Availability.OFFLINE:
            payload["availability"] = Availability(status.claim).value
        return _delta(r.id, **payload)

    def is_stale(self, robot_id: str, now: int) -> bool:
        return now - self.get(robot_id).last_heartbeat > self.offline_threshold

    def sweep_offline(self, now: int) -> list[EmbodimentDelta]:
        return [
            _delta(r.id, availability=Availability.OFFLINE.value)
            for r in self.roster()
            if r.availability is not Availability.OFFLINE and now - r.last_heartbeat > self.offline_threshold
        ]

    def set_availability(self, robot_id: str, availability: Availability) -> EmbodimentDelta | None:
        r = self.get(robot_id)
        if r.availability is availability:
            return None
        return _delta(r.id, availability=Availability(availability).value)

    def snap_localization(self, robot_id: str, position, tree: SceneTree) -> tuple[str, EmbodimentDelta | None]:
        """Nearest carrier to a map position; ties prefer the robot's current region, then the smaller id."""
        r = self.get(robot_id)
        carriers = tree.carriers()
        if not carriers:
            raise UnknownLocationError("scene tree has no carriers to snap to")
        home = tree.region_of(r.loc) if r.loc in tree else None

        def key(c):
            return (round(math.dist(c.position, position), 12), 0 if c.parent == home else 1, c.id)

        best = min(carriers, key=key).id
        if best == r.loc:
            return best, None
        return best, _delta(r.id, location=best)

    def find_capable(self, tool: str, near: str | None = None, tree: SceneTree | None = None,
                     include_busy: bool = False, exclude=()) -> list[str]:
        ok = {Availability.IDLE, Availability.BUSY} if include_busy else {Availability.IDLE}
        cands = [r for r in self.robots.values()
                 if tool in r.capabilities and r.availability in ok and r.id not in exclude]
        if near is None or tree is None or near not in tree:
            return sorted(r.id for r in cands)

        def key(r):
            if r.loc not in tree:
                return (math.inf, math.inf, r.id)
            return (tree.hops(near, r.loc), tree.map_distance(near, r.loc), r.id)

        return [r.id for r in sorted(cands, key=key)]

    def hotplug_tool(self, robot_id: str, tool: str, attach: bool) -> EmbodimentDelta | None:
        r = self.get(robot_id)
        if attach:
            if tool in r.capabilities:
                return None
            return _delta(r.id, capabilities=r.capabilities | {tool})
        if tool not in r.capabilities:
            raise DetachMissingToolError(f"robot {r.id} has no tool {tool}")
        return _delta(r.id, capabilities=r.capabilities - {tool})

    # -- application (called by the memory core only)

    def apply(self, delta: EmbodimentDelta, tree: SceneTree | None = None) -> EmbodimentRegistry:
        p = delta.payload
        if delta.op == "register":
            if delta.robot in self.robots:
                raise DuplicateRobotError(f"robot {delta.robot} already registered")
            missing = {"location", "capabilities", "resources", "sensors", "availability"} - set(p)
            if missing:
                raise MalformedDeltaError(f"registration lacks {sorted(missing)}")
            base = RobotProfile(delta.robot, p["location"], kind=p.get("kind", "wheeled"))
        else:
            if delta.robot not in self.robots:
                raise UnknownRobotError(f"no robot {delta.robot}")
            base = self.robots[delta.robot]
        changes = {}
        try:
            if "location" in p:
                loc = p["location"]
                if tree is not None:
                    node = tree.nodes.get(loc)
                    if node is None or node.kind is NodeKind.ROOT:
                        raise UnknownLocationError(f"location {loc} is not a region or carrier")
                changes["loc"] = loc
            if "capabilities" in p:
                changes["capabilities"] = frozenset(p["capabilities"])
            if "resources" in p:
                changes["resources"] = _check_resources(p["resources"])
            if "sensors" in p:
                changes["sensors"] = dict(p["sensors"])
            if "availability" in p:
                changes["availability"] = Availability(p["availability"])
            if "last_heartbeat" in p:
                changes["last_heartbeat"] = int(p["last_heartbeat"])
            if "holding" in p:
                changes["holding"] = p["holding"]
            if "kind" in p:
                changes["kind"] = p["kind"]
        except (TypeError, ValueError) as exc:
            raise MalformedDeltaError(f"bad embodiment payload: {exc}") from exc
        robots = dict(self.robots)
        robots[delta.robot] = replace(base, **changes)
        return replace(self, robots=robots)

    def to_dict(self) -> dict:
        return {
            "heartbeat_interval": self.heartbeat_interval,
            "offline_threshold": self.offline_threshold,
            "robots": {k: v.to_dict() for k, v in self.robots.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> EmbodimentRegistry:
        return cls(
            {k: RobotProfile.from_dict(v) for k, v in d.get("robots", {}).items()},
            int(d.get("heartbeat_interval", HEARTBEAT_INTERVAL)),
            int(d.get("offline_threshold", OFFLINE_THRESHOLD)),
        )
