import random

import pytest
from hypothesis import given, strategies as st

from stemos import canonical
from stemos.embodiment import OFFLINE_THRESHOLD, Availability
from stemos.errors import InvalidPlanError
from stemos.geometry import Transform
from stemos.orchestrator import Orchestrator, run_scenario
from stemos.planner import GlobalTask, RulePlanner, build_context, validate_graph
from stemos.sim import (DOMAINS, _footprint, FaultMode, FaultPlan, HallucinatingPlanner, RobotBody, World, fetch_task,
                        generate_world, in_band, make_team)
from stemos.spatial import build_scene_tree
from stemos.worldspec import CarrierSpec, ObjectSpec, RegionSpec, WorldSpec

from conftest import memory_for

SMALL = (0.04, 0.04, 0.05)


def table_world():
    return WorldSpec(
        regions=[RegionSpec("kitchen", "kitchen", (0.0, 0.0)), RegionSpec("hall", "hall", (8.0, 0.0))],
        carriers=[CarrierSpec("dining_table", "dining table", "dining_table", "kitchen", (0.0, 1.0)),
                  CarrierSpec("counter", "counter", "counter", "kitchen", (1.0, 0.0)),
                  CarrierSpec("shelf", "shelf", "shelf", "hall", (8.0, 1.0))],
        objects=[ObjectSpec("cup_1", "dining_table", "cup", SMALL, Transform.from_translation(-0.3, 0.0, 0.05)),
                 ObjectSpec("apple_1", "dining_table", "apple", SMALL, Transform.from_translation(0.3, 0.0, 0.05)),
                 ObjectSpec("box_1", "counter", "box", (0.14, 0.12, 0.12), Transform.from_translation(0, 0, 0.12),
                            {"open": False}, ("container", "openable"))])


def world_at(loc="dining_table", kind="wheeled", spec=None):
    spec = spec or table_world()
    body = RobotBody("r1", kind, loc, set(make_team([kind], spec)[0].tools))
    return World(spec, [body, RobotBody("r2", "wheeled", "kitchen", set(body.tools) | {"navigate"})])


# ---------------------------------------------------------------------------
# generation


def test_generation_is_deterministic():
    a = canonical.dumps(generate_world("HOUSEHOLD", "L1", 7).to_dict())
    b = canonical.dumps(generate_world("HOUSEHOLD", "L1", 7).to_dict())
    assert a == b
    assert a != canonical.dumps(generate_world("HOUSEHOLD", "L1", 8).to_dict())


def test_restaurant_l3_in_band():
    tree = build_scene_tree(generate_world("RESTAURANT", "L3", 0))
    assert 40 <= tree.node_count() <= 50


def test_supermarket_l2_band_over_seeds():
    for seed in range(100):
        assert in_band(build_scene_tree(generate_world("SUPERMARKET", "L2", seed)).node_count(), "L2")


def test_generated_objects_do_not_overlap():
    for domain in DOMAINS:
        world = World(generate_world(domain, "L3", 2), [])
        for c in world.truth.carriers():
            boxes = [_footprint(o.pose, o.extent) for o in c.graph.nodes.values()]
            for i, a in enumerate(boxes):
                for b in boxes[i + 1:]:
                    assert a[1] <= b[0] or b[1] <= a[0] or a[3] <= b[2] or b[3] <= a[2]


def test_generation_rejects_unknown_inputs():
    with pytest.raises(InvalidPlanError):
        generate_world("HOUSEHOLD", "L9", 0)
    with pytest.raises(InvalidPlanError):
        generate_world("MOON", "L1", 0)


# ---------------------------------------------------------------------------
# tools


def test_detect_absent_category():
    out = world_at().invoke_tool("r1", "detect", {"category": "egg"})
    assert out.status == "FAIL" and "no egg detected" in out.feedback
    assert out.observation[0] == "dining_table"


def test_pick_then_place_same_carrier():
    world = world_at()
    before = world.truth.node("dining_table").graph
    assert world.invoke_tool("r1", "pick", {"object": "cup_1"}).ok
    assert world.location_of("cup_1") == "robot:r1"
    assert world.invoke_tool("r1", "pick", {"object": "cup_1"}).ok
    out = world.invoke_tool("r1", "place", {"target": "dining_table"})
    assert out.ok and out.spatial[0].payload["carrier"] == "dining_table"
    after = world.truth.node("dining_table").graph
    assert {k: (n.category, n.extent) for k, n in after.nodes.items()} == \
        {k: (n.category, n.extent) for k, n in before.nodes.items()}


def test_navigate_examples():
    world = world_at()
    out = world.invoke_tool("r1", "navigate", {"target": "dining_table"})
    assert out.ok and out.spatial == () and out.embodiment == {}
    assert world.invoke_tool("r1", "navigate", {"target": "room_99"}).feedback.startswith("UNKNOWN_LOCATION")
    route = world.truth.route("dining_table", "shelf")
    hops = 0
    while world.bodies["r1"].loc != "shelf":
        out = world.invoke_tool("r1", "navigate", {"target": "shelf"})
        assert out.ok and out.embodiment == {"r1": {"location": world.bodies["r1"].loc}}
        hops += 1
    assert hops == len(route) and "shelf" == route[-1] and world.truth.root not in route


def test_tool_failure_codes():
    world = world_at()
    assert world.invoke_tool("r1", "place", {"target": "dining_table"}).feedback.startswith("NOT_HOLDING")
    assert world.invoke_tool("r1", "pick", {"object": "box_1"}).feedback.startswith("NOT_FOUND")
    assert world.invoke_tool("r1", "open", {"object": "cup_1"}).feedback.startswith("NOT_OPENABLE")
    world.invoke_tool("r1", "pick", {"object": "cup_1"})
    assert world.invoke_tool("r1", "pick", {"object": "apple_1"}).feedback.startswith("GRIPPER_FULL")
    assert world.invoke_tool("r1", "place", {"target": "counter"}).feedback.startswith("NOT_CO_LOCATED")
    while world.bodies["r1"].loc != "counter":
        world.invoke_tool("r1", "navigate", {"target": "counter"})
    out = world.invoke_tool("r1", "place", {"target": "counter", "inside": "box_1"})
    assert out.feedback.startswith("CONTAINER_CLOSED")
    assert world.invoke_tool("r1", "open", {"object": "box_1"}).ok
    assert world.invoke_tool("r1", "place", {"target": "counter", "inside": "box_1"}).ok
    assert world.holds(("in", "cup_1", "box_1")) and world.holds(("state", "box_1", "open", True))


def test_capability_missing():
    world = world_at(kind="single_arm")
    assert world.invoke_tool("r1", "navigate", {"target": "counter"}).feedback.startswith("CAPABILITY_MISSING")


def test_handover():
    world = world_at()
    world.bodies["r2"].loc = "dining_table"
    world.invoke_tool("r1", "pick", {"object": "cup_1"})
    out = world.invoke_tool("r1", "handover", {"to": "r2"})
    assert out.ok and world.bodies["r2"].holding == "cup_1" and world.check_conservation()


# ---------------------------------------------------------------------------
# faults


def test_inject_fault_errors():
    world = world_at()
    with pytest.raises(InvalidPlanError):
        world.inject_fault(FaultPlan("E9"))
    with pytest.raises(InvalidPlanError):
        world.inject_fault(FaultPlan(FaultMode.E1, 3, "r7"))
    with pytest.raises(InvalidPlanError):
        world.inject_fault(FaultPlan(FaultMode.E2, 3, "r1", "teleport"))
    with pytest.raises(InvalidPlanError):
        world.inject_fault(FaultPlan(FaultMode.E1, 3, "r1", persistence="transient"))
    assert FaultPlan.from_dict(FaultPlan(FaultMode.E2, 4, "r1", "pick").to_dict()) == \
        FaultPlan(FaultMode.E2, 4, "r1", "pick")


def test_e1_goes_offline_within_threshold():
    spec = generate_world("HOUSEHOLD", "L1", 0)
    world = World(spec, make_team(["wheeled", "wheeled"], spec))
    world.inject_fault(FaultPlan(FaultMode.E1, 10, "r1"))
    orch = Orchestrator(world)
    status = {}
    for _ in range(10 + OFFLINE_THRESHOLD):
        orch.step()
        status[orch.now] = orch.state.embodiment.get("r1").availability
    assert status[10] is not Availability.OFFLINE
    assert status[10 + OFFLINE_THRESHOLD] is Availability.OFFLINE
    assert orch.state.embodiment.get("r2").availability is not Availability.OFFLINE


def test_transient_outage_recovers():
    spec = generate_world("HOUSEHOLD", "L1", 0)
    world = World(spec, make_team(["wheeled"], spec))
    world.inject_fault(FaultPlan(FaultMode.E1, 3, "r1", persistence="transient", duration=30))
    orch = Orchestrator(world)
    seen = []
    for _ in range(45):
        orch.step()
        seen.append(orch.state.embodiment.get("r1").availability)
    assert Availability.OFFLINE in seen and seen[-1] is not Availability.OFFLINE


def test_e2_breaks_tool():
    world = world_at()
    world.inject_fault(FaultPlan(FaultMode.E2, 5, "r1", "pick"))
    assert world.invoke_tool("r1", "pick", {"object": "cup_1"}).ok
    world.invoke_tool("r1", "place", {"target": "dining_table"})
    assert world.fire_faults(5)
    assert world.invoke_tool("r1", "pick", {"object": "cup_1"}).feedback.startswith("TOOL_BROKEN")


def test_e3_corrupts_first_plan_only():
    state, _ = memory_for(table_world(), ["wheeled"])
    planner = HallucinatingPlanner(RulePlanner(), ["t1"])
    ctx = build_context(GlobalTask("t1", "bring a cup to shelf"), state)
    first = planner.plan(ctx).graph
    codes = [v.code for v in validate_graph(first, state.embodiment, state.spatial)]
    assert codes == ["HALLUCINATED_LOCATION"]
    assert validate_graph(planner.plan(ctx).graph, state.embodiment, state.spatial) == []


def test_heartbeats_only_on_interval():
    world = world_at()
    world.bodies["r2"].offline_from, world.bodies["r2"].offline_until = 0, float("inf")
    assert world.heartbeats(3, 5) == []
    assert [h.robot for h in world.heartbeats(10, 5)] == ["r1"]


# ---------------------------------------------------------------------------
# invariants


def test_quiescence():
    spec = generate_world("RESTAURANT", "L2", 3)
    orch = Orchestrator(World(spec, make_team(["wheeled", "humanoid"], spec)))
    before = orch.state.spatial.to_dict()
    for _ in range(100):
        orch.step()
    assert orch.state.spatial.to_dict() == before
    assert not any(e.spatial_delta for e in orch.store.log)


TOOLS = ("navigate", "detect", "pick", "place", "place_in", "open", "close", "wait")


@given(st.integers(0, 2 ** 16), st.lists(st.tuples(st.sampled_from(TOOLS), st.integers(0, 99)), max_size=40))
def test_conservation_and_tool_honesty(seed, script):
    spec = generate_world("HOUSEHOLD", "L1", seed % 5)
    world = World(spec, make_team(["wheeled"], spec))
    mirror = world.truth
    places = [n for n in world.truth.nodes if n != world.truth.root]
    carriers = [c.id for c in world.truth.carriers()]
    objects = sorted(world.truth.object_index)
    boxes = [o.id for o in spec.objects if "openable" in o.affordances] or objects
    for tool, k in script:
        if tool == "navigate":
            args = {"target": places[k % len(places)]}
        elif tool == "detect":
            args = {}
        elif tool == "pick":
            args = {"object": objects[k % len(objects)]}
        elif tool == "place":
            args = {"target": carriers[k % len(carriers)]}
        elif tool == "place_in":
            tool, args = "place", {"target": world.bodies["r1"].loc, "inside": boxes[k % len(boxes)]}
        elif tool in ("open", "close"):
            args = {"object": boxes[k % len(boxes)]}
        else:
            args = {}
        out = world.invoke_tool("r1", tool, args)
        assert world.check_conservation()
        if not out.ok:
            assert out.spatial == () and ":" in out.feedback
        for d in out.spatial:
            mirror = d.apply(mirror)
        assert mirror.to_dict() == world.truth.to_dict()
    assert len(world.truth.object_index) + len(world.held) == len(objects)


def test_drift_conserves_objects():
    spec = generate_world("SUPERMARKET", "L2", 1)
    world = World(spec, [], seed=1, drift_prob=1.0)
    n = len(world.truth.object_index)
    moves = [world.drift() for _ in range(30)]
    assert any(moves) and len(world.truth.object_index) == n


def test_reset_restores_world():
    world = world_at()
    before = world.truth.to_dict()
    world.invoke_tool("r1", "pick", {"object": "cup_1"})
    world.invoke_tool("r1", "navigate", {"target": "counter"})
    world.reset()
    assert world.truth.to_dict() == before
    assert world.bodies["r1"].loc == "dining_table" and world.bodies["r1"].holding is None


def test_run_trace_is_deterministic():
    def once():
        spec = generate_world("HOUSEHOLD", "L2", 11)
        world = World(spec, make_team(["wheeled", "wheeled"], spec), 11)
        rng = random.Random(11)
        tasks = [fetch_task(spec, rng, "t1", 2), fetch_task(spec, rng, "t2", 1)]
        orch = run_scenario(world, tasks)
        return [canonical.dumps(x) for x in orch.trace], [canonical.dumps(e) for e in orch.store.log]

    assert once() == once()
