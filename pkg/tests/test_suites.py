import pytest

from stemos.errors import InvalidPlanError
from stemos.orchestrator import BASELINE, FULL
from stemos.suites import (SuiteConfig, lifelong_trial, robustness_trial, run_suite, run_trial, scalability_trial)


def test_config_from_dict():
    cfg = SuiteConfig.from_dict({"trials": 2, "levels": ["L1"], "ignored": 1})
    assert cfg.trials == 2 and cfg.levels == ("L1",)


def test_paired_trials_share_world_and_tasks():
    build = lifelong_trial("L1", 3)
    a, b = build(17), build(17)
    assert a.world.spec.to_dict() == b.world.spec.to_dict()
    assert [s.to_dict() for s in a.scenario] == [s.to_dict() for s in b.scenario]
    mem, base = run_trial(build, FULL, 17), run_trial(build, BASELINE, 17)
    assert [r.task for r in mem.records] == [r.task for r in base.records]


def test_lifelong_sequence_shape():
    trial = lifelong_trial("L2", 5)(3)
    tasks = [s.task for s in trial.scenario]
    assert [t.sq_index for t in tasks] == [1, 2, 3, 4, 5]
    assert all(t.previous == p.id for t, p in zip(tasks[1:], tasks))


def test_robustness_trials_inject_their_fault():
    assert robustness_trial("E1")(1).world.faults[0].mode == "E1"
    assert robustness_trial("E2")(1).world.faults[0].tool == "pick"
    assert robustness_trial("NONE")(1).world.faults == []
    with pytest.raises(InvalidPlanError):
        robustness_trial("E7")(1)


def test_scalability_team_sizes():
    for n in (1, 3, 5):
        assert len(scalability_trial(n)(2).world.bodies) == n


def test_small_suites_produce_cells():
    life = run_suite("lifelong", {"trials": 2, "levels": ["L1"], "sqs": [1, 3]})
    assert set(life.cells) == {(arm, "L1", sq) for arm in ("memory", "baseline") for sq in (1, 3)}
    assert life.cell("memory", "L1", 3).tasks == 6
    rob = run_suite("ROBUSTNESS", {"trials": 2, "modes": ["none", "e2"], "arms": ["embodiment"]})
    assert {k[0] for k in rob.cells} == {"memory", "baseline", "no-embodiment"}
    scale = run_suite("SCALABILITY", {"trials": 2, "teams": [1, 3]})
    assert set(scale.cells) == {("memory", "wheeled x1"), ("memory", "wheeled x3")}
    abl = run_suite("ABLATION", {"trials": 2, "levels": ["L1"]})
    assert abl.cell("no-embodiment", "L1").sr == 0.0
    assert "ABLATION" in abl.table
    with pytest.raises(InvalidPlanError):
        run_suite("NOPE")
