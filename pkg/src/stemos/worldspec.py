"""World description file: regions, carriers, objects and storage priors."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import canonical
from .geometry import Transform


@dataclass(frozen=True)
class RegionSpec:
    id: str
    name: str
    position: tuple[float, float]
    media: tuple[str, ...] = ()


@dataclass(frozen=True)
class CarrierSpec:
    id: str
    name: str
    category: str
    region: str
    position: tuple[float, float]
    surface: tuple[float, float] = (0.6, 0.4)


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    carrier: str
    category: str
    extent: tuple[float, float, float]
    pose: Transform = Transform()
    state: dict = field(default_factory=dict)
    affordances: tuple[str, ...] = ()


@dataclass
class WorldSpec:
    domain: str = "HOUSEHOLD"
    regions: list[RegionSpec] = field(default_factory=list)
    carriers: list[CarrierSpec] = field(default_factory=list)
    objects: list[ObjectSpec] = field(default_factory=list)
    priors: dict[str, list[str]] = field(default_factory=dict)
    level: str | None = None
    seed: int | None = None
    root_media: tuple[str, ...] = ("map/topdown.png", "map/occupancy.pgm")

    def node_count(self) -> int:
        """Tree plus graph nodes, root included."""
        return 1 + len(self.regions) + len(self.carriers) + len(self.objects)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "level": self.level,
            "seed": self.seed,
            "root_media": list(self.root_media),
            "regions": [
                {"id": r.id, "name": r.name, "position": list(r.position), "media": list(r.media)}
                for r in self.regions
            ],
            "carriers": [
                {"id": c.id, "name": c.name, "category": c.category, "region": c.region,
                 "position": list(c.position), "surface": list(c.surface)}
                for c in self.carriers
            ],
            "objects": [
                {"id": o.id, "carrier": o.carrier, "category": o.category, "extent": list(o.extent),
                 "pose": o.pose.to_dict(), "state": dict(o.state), "affordances": list(o.affordances)}
                for o in self.objects
            ],
            "priors": {k: list(v) for k, v in self.priors.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> WorldSpec:
        return cls(
            domain=d.get("domain", "HOUSEHOLD"),
            level=d.get("level"),
            seed=d.get("seed"),
            root_media=tuple(d.get("root_media", ())),
            regions=[
                RegionSpec(r["id"], r.get("name", r["id"]), tuple(r.get("position", (0.0, 0.0))),
                           tuple(r.get("media", ())))
                for r in d.get("regions", [])
            ],
            carriers=[
                CarrierSpec(c["id"], c.get("name", c["id"]), c.get("category", c["id"]), c["region"],
                            tuple(c.get("position", (0.0, 0.0))), tuple(c.get("surface", (0.6, 0.4))))
                for c in d.get("carriers", [])
            ],
            objects=[
                ObjectSpec(o["id"], o["carrier"], o["category"], tuple(o["extent"]),
                           Transform.from_dict(o["pose"]) if "pose" in o else Transform(),
                           dict(o.get("state", {})), tuple(o.get("affordances", ())))
                for o in d.get("objects", [])
            ],
            priors={k: list(v) for k, v in d.get("priors", {}).items()},
        )

    def dumps(self) -> str:
        return canonical.dumps(self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> WorldSpec:
        return cls.from_dict(canonical.loads(Path(path).read_text()))
