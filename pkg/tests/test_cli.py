import json
import random

import numpy as np

from stemos import canonical
from stemos.alignment import MapProjection, random_transform
from stemos.cli import load_scenario, main, save_scenario
from stemos.orchestrator import read_trace
from stemos.sim import fetch_task, generate_world


def test_run_writes_report_trace_and_log(tmp_path, capsys):
    scen = tmp_path / "s.json"
    save_scenario({"kind": "lifelong", "level": "L1", "sq": 2}, scen)
    out, trace, log = tmp_path / "r.json", tmp_path / "t.jsonl", tmp_path / "e.log"
    code = main(["run", str(scen), "--seed", "3", "--trials", "2", "--out", str(out), "--trace", str(trace),
                 "--log", str(log)])
    assert code == 0
    text = capsys.readouterr().out
    assert text.startswith("RUN") and "memory/lifelong/L1" in text
    body = json.loads(out.read_text())
    assert len(body["runs"]) == 2 and body["cells"][0]["tasks"] == 4
    assert sum(1 for x in read_trace(trace) if x["kind"] == "task_end") == 4
    assert main(["replay", str(log)]) == 0
    assert "deterministic yes" in capsys.readouterr().out
    assert main(["metrics", str(trace)]) == 0
    assert "METRICS" in capsys.readouterr().out


def test_run_baseline_and_fault_flags(tmp_path, capsys):
    scen = tmp_path / "s.json"
    save_scenario({"kind": "lifelong", "level": "L1"}, scen)
    assert main(["run", str(scen), "--memory", "off", "--fault", "E2"]) == 0
    assert "baseline/robustness" in capsys.readouterr().out
    assert main(["run", str(scen), "--ablate", "spatial"]) == 0
    assert "no-spatial" in capsys.readouterr().out


def test_explicit_scenario(tmp_path, capsys):
    scen = tmp_path / "s.json"
    spec = generate_world("RESTAURANT", "L1", 4)
    task = fetch_task(spec, random.Random(1), "t1")
    save_scenario({"kind": "explicit", "world": spec.to_dict(), "team": ["humanoid"], "tasks": [task.to_dict()]},
                  scen)
    assert load_scenario(scen)["kind"] == "explicit"
    assert main(["run", str(scen)]) == 0
    assert '"completed":1' in capsys.readouterr().out


def test_bad_inputs_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "martian"}')
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["replay", str(tmp_path / "missing.log")]) == 2
    assert "error:" in capsys.readouterr().err


def test_align_map_and_rigid(tmp_path, capsys):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (12, 3))
    T = random_transform(rng)
    proj = MapProjection(2.0, (1.0, 0.0))
    path = tmp_path / "map.json"
    path.write_text(canonical.dumps({"points": X.tolist(), "targets": proj.project(T.apply(X)).tolist(),
                                     "projection": {"scale": 2.0, "offset": [1.0, 0.0]}}))
    assert main(["align", str(path)]) == 0
    last = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert last["mode"] == "map" and last["cost"] < 1e-12 and last["unobservable"] == ["tz"]
    path.write_text(canonical.dumps({"pairs": [[p, q] for p, q in zip(X.tolist(), T.apply(X).tolist())]}))
    assert main(["align", str(path)]) == 0
    last = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert last["mode"] == "rigid" and last["rms"] < 1e-9


def test_suite_command(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"trials": 1, "teams": [1]}')
    out = tmp_path / "o.json"
    assert main(["suite", "scalability", str(cfg), "--out", str(out)]) == 0
    assert "SCALABILITY" in capsys.readouterr().out
    assert json.loads(out.read_text())[0]["cell"] == ["memory", "wheeled x1"]
