import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, strategies as st

from stemos import canonical
from stemos.errors import HallucinationError, NoCapableRobotError, PlannerTimeoutError, TransportFailureError, \
    UnknownTemplateError
from stemos.geometry import Transform
from stemos.planner import (GlobalTask, Goal, PlannerContext, RulePlanner, Subtask, WorkflowGraph, build_context,
                            decompose, parse_instruction, remote_decompose, validate_graph)
from stemos.sim import generate_world
from stemos.worldspec import CarrierSpec, ObjectSpec, RegionSpec, WorldSpec

from conftest import memory_for

SMALL = (0.04, 0.04, 0.05)


def restaurant():
    return WorldSpec(
        domain="RESTAURANT",
        regions=[RegionSpec("kitchen", "kitchen", (0.0, 0.0)), RegionSpec("dining_hall", "dining hall", (5.0, 0.0))],
        carriers=[CarrierSpec("fridge", "fridge", "fridge", "kitchen", (0.0, 1.0)),
                  CarrierSpec("pantry_shelf", "pantry shelf", "pantry_shelf", "kitchen", (1.0, 1.0)),
                  CarrierSpec("prep_counter", "prep counter", "prep_counter", "kitchen", (1.0, -1.0)),
                  CarrierSpec("dining_table", "dining table", "dining_table", "dining_hall", (5.0, 1.0))],
        objects=[ObjectSpec("patty_1", "fridge", "patty", SMALL, Transform.from_translation(0, 0, 0.05)),
                 ObjectSpec("bun_1", "pantry_shelf", "bun", SMALL, Transform.from_translation(0, 0, 0.05)),
                 ObjectSpec("orange_1", "prep_counter", "orange", SMALL, Transform.from_translation(-0.2, 0, 0.05)),
                 ObjectSpec("knife_1", "prep_counter", "knife", SMALL, Transform.from_translation(0.2, 0, 0.05)),
                 ObjectSpec("box_1", "prep_counter", "box", (0.14, 0.12, 0.12),
                            Transform.from_translation(0, 0.1, 0.12), {"open": False})],
        priors={"patty": ["fridge"], "bun": ["pantry_shelf"], "egg": ["fridge"]})


def context(instruction, team, spec=None, task="g1"):
    state, _ = memory_for(spec or restaurant(), team)
    return build_context(GlobalTask(task, instruction), state), state


def test_parse_templates():
    assert parse_instruction("Bring an orange and a knife to the dining_table.").items == ("orange", "knife")
    assert parse_instruction("now take them to dining_table").template == "deliver"
    assert parse_instruction("order a normal burger").dish == "burger"
    assert parse_instruction("pack the orange into a box").container == "box"
    with pytest.raises(UnknownTemplateError):
        parse_instruction("dance a little")


def test_single_fetch_one_robot():
    ctx, _ = context("bring an orange to dining_table", ["wheeled"])
    g = decompose(ctx).graph
    assert [(s.depth, s.robots) for s in g.subtasks] == [(1, ("r1",))]
    assert g.subtasks[0].goals == [Goal("fetch", obj="orange_1", category="orange", dest="dining_table")]


def test_parallel_fetch_two_robots():
    ctx, state = context("fetch an orange and a knife to dining_table", ["wheeled", "wheeled"])
    g = decompose(ctx).graph
    assert [s.depth for s in g.subtasks] == [1, 1]
    assert {s.robots[0] for s in g.subtasks} == {"r1", "r2"}
    assert validate_graph(g, state.embodiment, state.spatial) == []


def test_burger_is_two_layers():
    ctx, state = context("order a normal burger", ["humanoid", "dual_arm"])
    res = decompose(ctx)
    g = res.graph
    assert g.depths() == [1, 2]
    assert len(g.layer(1)) == 2 and len(g.layer(2)) == 1
    assert {goal.dest for s in g.layer(1) for goal in s.goals} == {"prep_counter"}
    assert {goal.dest for goal in g.layer(2)[0].goals} == {"dining_table"}
    assert validate_graph(g, state.embodiment, state.spatial) == []
    assert res.trace[0] == "template prepare_serve matched"


def test_package_template():
    ctx, state = context("pack the orange into a box", ["wheeled", "wheeled"])
    g = decompose(ctx).graph
    assert g.depths() == [1, 2]
    assert {goal.kind for goal in g.layer(1)[0].goals + g.layer(1)[1].goals} == {"open", "fetch"}
    assert g.layer(2)[0].goals[0].container == "box_1"


def test_no_capable_robot():
    ctx, _ = context("bring an orange to dining_table", ["dual_arm"])
    with pytest.raises(NoCapableRobotError):
        decompose(ctx)


def test_determinism_and_capability():
    spec = generate_world("HOUSEHOLD", "L2", 5)
    cats = sorted({o.category for o in spec.objects if o.category not in ("bag", "box")})
    ctx, state = context(f"bring a {cats[0]} and a {cats[1]} to {spec.carriers[0].id}",
                         ["wheeled", "quadruped", "dual_arm"], spec)
    a, b = decompose(ctx), RulePlanner().plan(ctx)
    assert canonical.dumps(a) == canonical.dumps(b)
    for s in a.graph.subtasks:
        for r in s.robots:
            assert s.tools_for(r) <= state.embodiment.get(r).capabilities


def test_context_order_is_fixed():
    ctx, _ = context("bring an orange to dining_table", ["wheeled"])
    parts = json.loads(ctx.text())
    assert parts[0] == json.loads(canonical.dumps(list(ctx.M_s))) and parts[3] == ctx.T_global


# ---------------------------------------------------------------------------
# validation


def graph(*subtasks):
    return WorkflowGraph("g1", tuple(subtasks))


def sub(sid, depth, robot="r1", **goal):
    g = Goal("fetch", **({"obj": "orange_1", "dest": "dining_table"} | goal))
    return Subtask(sid, g.describe(), depth, (robot,), {robot: (g,)})


def test_validator_examples():
    _, state = context("bring an orange to dining_table", ["wheeled"])
    reg, tree = state.embodiment, state.spatial
    assert validate_graph(graph(sub("a", 1), sub("b", 2)), reg, tree) == []
    codes = [v.code for v in validate_graph(graph(sub("a", 1, dest="room_99")), reg, tree)]
    assert codes == ["HALLUCINATED_LOCATION"]
    codes = [v.code for v in validate_graph(graph(sub("a", 1), sub("b", 3)), reg, tree)]
    assert codes == ["NONCONTIGUOUS_DEPTHS"]
    codes = {v.code for v in validate_graph(graph(sub("a", 1, robot="r7")), reg, tree)}
    assert codes == {"UNKNOWN_ROBOT"}


@given(st.lists(st.integers(1, 5), min_size=1, max_size=8))
def test_validator_depth_property(depths):
    g = graph(*[sub(f"s{i}", d) for i, d in enumerate(depths)])
    noncontig = sorted(set(depths)) != list(range(1, len(set(depths)) + 1))
    assert any(v.code == "NONCONTIGUOUS_DEPTHS" for v in validate_graph(g)) == noncontig


# ---------------------------------------------------------------------------
# remote adapter


class _Server:
    def __init__(self, reply):
        outer = self
        self.requests = []

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                outer.requests.append(json.loads(body))
                data = reply if isinstance(reply, bytes) else json.dumps(reply).encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/plan"
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def serve():
    servers = []

    def start(reply):
        s = _Server(reply)
        servers.append(s)
        return s
    yield start
    for s in servers:
        s.close()


def canned(dest="dining_table"):
    return {"trace": ["canned"], "subtasks": [
        {"description": "bring orange", "depth": 1, "robots": ["r1"],
         "roles": {"r1": [Goal("fetch", obj="orange_1", category="orange", dest=dest).to_dict()]}}]}


def test_remote_echo(serve):
    ctx, _ = context("bring an orange to dining_table", ["wheeled"])
    srv = serve(canned())
    res = remote_decompose(ctx, srv.url, timeout=5)
    assert res.trace == ("canned",)
    assert res.graph.subtasks[0].goals[0].dest == "dining_table"
    req = srv.requests[0]
    assert req["instruction"] == ctx.T_global and "navigate" in req["tools"] and req["roster"]


def test_remote_hallucination(serve):
    ctx, _ = context("bring an orange to dining_table", ["wheeled"])
    srv = serve(canned("room_99"))
    with pytest.raises(HallucinationError) as info:
        remote_decompose(ctx, srv.url, timeout=5)
    assert [v.code for v in info.value.violations] == ["HALLUCINATED_LOCATION"]


def test_remote_malformed(serve):
    ctx, _ = context("bring an orange to dining_table", ["wheeled"])
    with pytest.raises(HallucinationError):
        remote_decompose(ctx, serve(b"not json").url, timeout=5)


def test_remote_unreachable():
    ctx = PlannerContext((), (), (), "bring an orange to dining_table", "g1")
    with pytest.raises((TransportFailureError, PlannerTimeoutError)):
        remote_decompose(ctx, "http://127.0.0.1:9/plan", timeout=0.5)
