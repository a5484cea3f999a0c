"""Success metrics computed from run traces.

SR is the share of completed tasks, MSR the share of lifelong sequences whose
final task completed, AEST the mean tool-call count of completed tasks and SS
their ratio SR / AEST.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from . import canonical
from .errors import EmptyInputError
from .orchestrator import STAGES, UNATTRIBUTED, stage_of


@dataclass(frozen=True)
class TaskRecord:
    task: str
    completed: bool
    steps: int
    level: str | None = None
    domain: str | None = None
    sequence: str | None = None
    sq_index: int = 1
    sq_len: int = 1
    error: str | None = None

    @property
    def stage(self) -> str | None:
        return None if self.completed else (stage_of(self.error) or UNATTRIBUTED)

    @property
    def final(self) -> bool:
        return self.sq_index == self.sq_len

    def to_dict(self) -> dict:
        return {"task": self.task, "completed": self.completed, "steps": self.steps, "level": self.level,
                "domain": self.domain, "sequence": self.sequence, "sq_index": self.sq_index,
                "sq_len": self.sq_len, "error": self.error, "stage": self.stage}


@dataclass
class RunReport:
    records: list
    config: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def failures(self) -> dict:
        return dict(Counter(r.stage for r in self.records if not r.completed))

    @classmethod
    def from_trace(cls, trace: list[dict]) -> RunReport:
        """Per-task records; steps are counted from the robot tool lines, not taken from the summary line."""
        steps = Counter(line["task"] for line in trace if line.get("kind") == "tool")
        config, seed = {}, None
        records = []
        for line in trace:
            kind = line.get("kind")
            if kind == "run_start":
                config = line.get("config", {})
                seed = config.get("seed")
            elif kind == "task_end":
                records.append(TaskRecord(line["task"], bool(line["completed"]), steps.get(line["task"], 0),
                                          line.get("level"), line.get("domain"), line.get("sequence"),
                                          int(line.get("sq_index", 1)), int(line.get("sq_len", 1)),
                                          line.get("error")))
        return cls(records, config, seed)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "config": self.config, "failures": self.failures,
                "records": [r.to_dict() for r in self.records]}


@dataclass(frozen=True)
class MetricsReport:
    tasks: int
    completed: int
    sequences: int
    sr: float
    msr: float | None
    aest: float | None
    ss: float | None
    failures: dict = field(default_factory=dict)

    @property
    def ss_reported(self) -> float | None:
        """SS as printed in tables, to two decimals."""
        return None if self.ss is None else round(self.ss, 2)

    def to_dict(self) -> dict:
        return {"tasks": self.tasks, "completed": self.completed, "sequences": self.sequences,
                "SR": round(self.sr, 4), "MSR": None if self.msr is None else round(self.msr, 4),
                "AEST": None if self.aest is None else round(self.aest, 4),
                "SS": None if self.ss is None else round(self.ss, 4), "failures": dict(sorted(self.failures.items()))}


def _records(items) -> list[TaskRecord]:
    out = []
    for it in items:
        if isinstance(it, RunReport):
            out.extend(it.records)
        elif isinstance(it, TaskRecord):
            out.append(it)
        else:
            raise TypeError(f"cannot read metrics from {type(it).__name__}")
    return out


def compute_metrics(reports) -> MetricsReport:
    recs = _records(reports)
    if not recs:
        raise EmptyInputError("no task records")
    done = [r for r in recs if r.completed]
    sr = 100.0 * len(done) / len(recs)
    finals = [r for r in recs if r.final]
    msr = 100.0 * sum(r.completed for r in finals) / len(finals) if finals else None
    aest = sum(r.steps for r in done) / len(done) if done else None
    ss = sr / aest if aest else None
    failures = dict(Counter(r.stage for r in recs if not r.completed))
    return MetricsReport(len(recs), len(done), len(finals), sr, msr, aest, ss, failures)


def classify_failures(trace: list[dict]) -> dict:
    """Histogram of failed tasks by pipeline stage of their terminal error."""
    hist = Counter()
    for line in trace:
        if line.get("kind") == "task_end" and not line["completed"]:
            hist[stage_of(line.get("error")) or UNATTRIBUTED] += 1
    return dict(hist)


def synthetic_records(sr: float, aest: float, n: int = 10000) -> list[TaskRecord]:
    """Records realising a given SR (percent) and AEST exactly when ``sr * n / 100 * aest`` is integral."""
    k = round(sr * n / 100.0)
    total = round(aest * k)
    base, extra = divmod(total, k) if k else (0, 0)
    recs = [TaskRecord(f"t{i}", True, base + (1 if i < extra else 0)) for i in range(k)]
    recs += [TaskRecord(f"t{i}", False, 0, error="TIMEOUT") for i in range(k, n)]
    return recs


def group(records, key) -> dict:
    cells: dict = {}
    for r in _records(records):
        cells.setdefault(key(r), []).append(r)
    return {k: compute_metrics(v) for k, v in sorted(cells.items(), key=lambda kv: repr(kv[0]))}


def _fmt(v, digits: int) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def format_table(cells: dict, title: str = "") -> str:
    """Fixed-width text table, one row per cell, sorted by cell key."""
    head = f"{'cell':<40} {'n':>5} {'SR':>7} {'MSR':>7} {'AEST':>7} {'SS':>6}  failures"
    lines = [title, head] if title else [head]
    for key in sorted(cells, key=repr):
        m = cells[key]
        name = key if isinstance(key, str) else "/".join(str(k) for k in key)
        fails = ",".join(f"{k}={v}" for k, v in sorted(m.failures.items()))
        lines.append(f"{name:<40} {m.tasks:>5} {_fmt(m.sr, 1):>7} {_fmt(m.msr, 1):>7} {_fmt(m.aest, 1):>7} "
                     f"{_fmt(m.ss, 2):>6}  {fails}")
    return "\n".join(lines)


def records_json(cells: dict) -> str:
    return canonical.dumps([{"cell": list(k) if isinstance(k, tuple) else k, **m.to_dict()}
                            for k, m in sorted(cells.items(), key=lambda kv: repr(kv[0]))])


__all__ = ["STAGES", "MetricsReport", "RunReport", "TaskRecord", "classify_failures", "compute_metrics",
           "format_table", "group", "records_json", "synthetic_records"]
