import pytest
from hypothesis import given, strategies as st

from stemos.errors import EmptyInputError
from stemos.metrics import (RunReport, TaskRecord, classify_failures, compute_metrics, format_table, group,
                            records_json, synthetic_records)
from stemos.orchestrator import STAGES, UNATTRIBUTED, stage_of

PUBLISHED = [(76.6, 34.8, 2.20), (69.7, 8.5, 8.20), (70.7, 10.5, 6.73),
             (89.2, 11.6, 7.69), (24.2, 58.1, 0.42), (38.3, 8.7, 4.40)]


@pytest.mark.parametrize("sr,aest,ss", PUBLISHED)
def test_published_score_identities(sr, aest, ss):
    m = compute_metrics(synthetic_records(sr, aest))
    assert m.sr == pytest.approx(sr) and m.aest == pytest.approx(aest)
    assert m.ss_reported == pytest.approx(ss, rel=0.005)


def test_small_examples():
    recs = [TaskRecord("a", True, 4), TaskRecord("b", True, 6), TaskRecord("c", False, 9, error="TOOL_BROKEN")]
    m = compute_metrics(recs)
    assert m.sr == pytest.approx(200 / 3) and m.aest == 5.0 and m.ss == pytest.approx(m.sr / 5.0)
    assert m.failures == {"tool-invocation": 1}
    assert compute_metrics([TaskRecord("x", False, 3, error="TIMEOUT")]).aest is None
    with pytest.raises(EmptyInputError):
        compute_metrics([])


def test_msr_counts_final_tasks_only():
    recs = [TaskRecord("s1.t1", True, 3, sequence="s1", sq_index=1, sq_len=2),
            TaskRecord("s1.t2", False, 0, sequence="s1", sq_index=2, sq_len=2, error="NOT_FOUND"),
            TaskRecord("s2.t1", True, 3, sequence="s2", sq_index=1, sq_len=2),
            TaskRecord("s2.t2", True, 5, sequence="s2", sq_index=2, sq_len=2)]
    m = compute_metrics(recs)
    assert m.sequences == 2 and m.msr == 50.0 and m.sr == 75.0


def test_stage_attribution():
    assert stage_of("TOOL_BROKEN") == "tool-invocation"
    assert stage_of("HALLUCINATION") == "subtask-generation"
    assert stage_of("GOAL_MISMATCH") == "memory-operation"
    assert stage_of("SOMETHING_NEW") == UNATTRIBUTED and stage_of(None) is None
    codes = [c for cs in STAGES.values() for c in cs]
    assert len(codes) == len(set(codes))


def test_trace_parsing_and_failure_histogram():
    trace = [{"kind": "run_start", "tick": 0, "config": {"seed": 3}},
             {"kind": "tool", "tick": 1, "task": "t1"}, {"kind": "tool", "tick": 2, "task": "t1"},
             {"kind": "tool", "tick": 2, "task": "t2"},
             {"kind": "task_end", "tick": 3, "task": "t1", "completed": True, "steps": 99},
             {"kind": "task_end", "tick": 4, "task": "t2", "completed": False, "error": "WEIRD"}]
    rep = RunReport.from_trace(trace)
    assert rep.seed == 3 and [r.steps for r in rep.records] == [2, 1]
    assert classify_failures(trace) == {UNATTRIBUTED: 1} == rep.failures


def test_group_and_format():
    recs = [TaskRecord("a", True, 2, level="L1"), TaskRecord("b", True, 4, level="L2")]
    cells = group(recs, lambda r: r.level)
    assert list(cells) == ["L1", "L2"] and cells["L2"].aest == 4.0
    table = format_table(cells, "T")
    assert table.splitlines()[0] == "T" and "L2" in table
    assert '"cell":"L1"' in records_json(cells)
    with pytest.raises(TypeError):
        compute_metrics(["nope"])


@given(st.lists(st.tuples(st.booleans(), st.integers(1, 60)), min_size=1, max_size=50))
def test_score_is_ratio(items):
    recs = [TaskRecord(f"t{i}", ok, n, error=None if ok else "TIMEOUT") for i, (ok, n) in enumerate(items)]
    m = compute_metrics(recs)
    done = [n for ok, n in items if ok]
    assert m.sr == pytest.approx(100 * len(done) / len(items))
    if done:
        assert m.aest == pytest.approx(sum(done) / len(done)) and m.ss == pytest.approx(m.sr / m.aest)
    else:
        assert m.aest is None and m.ss is None
