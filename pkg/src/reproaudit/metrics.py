"""Aggregation of audit records into corpus-level statistics.

All operations are pure folds over immutable record lists: reliability
rates overall and per group, the agent-by-language success matrix, the
completeness-gap distribution, runtime-multiplier statistics, the error
taxonomy distribution, the debug-time cost model, and the one-page summary
block.
"""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, field
from typing import Any

from .classifier import ErrorCategory

SCHEMA_VERSION = 1

OUTCOMES = ("Success", "Partial", "Failed")


class MetricsError(Exception):
    pass


class EmptyGroup(MetricsError):
    pass


@dataclass
class AuditRecord:
    """The joined result of one audit; the unit of persistence and
    aggregation."""

    agent: str
    language: str
    prompt_id: str
    project_path: str
    outcome: str
    out_of_box: bool
    final_status: str
    claimed: list[str] = field(default_factory=list)
    added: list[str] = field(default_factory=list)
    runtime: list[str] | None = None
    runtime_unmapped: list[str] = field(default_factory=list)
    capture_method: str | None = None
    category: str | None = None
    gap: int = 0
    multiplier: float | None = None
    entry: str | None = None
    iterations: list[dict[str, Any]] = field(default_factory=list)
    round0: dict[str, Any] | None = None
    invocations: list[dict[str, Any]] = field(default_factory=list)
    toolchain: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    anomalies: list[str] = field(default_factory=list)
    created_at: str = ""
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        # outcome is round 0's outcome, so round-0 Success IS out-of-box
        if self.out_of_box != (self.outcome == "Success"):
            raise ValueError("out_of_box must equal (round-0 outcome == Success)")
        if self.out_of_box and self.category is not None:
            raise ValueError("out_of_box records cannot carry an error category")
        if self.category is not None:
            ErrorCategory(self.category)  # raises on unknown value
        if self.gap < 0:
            raise ValueError("completeness gap cannot be negative")

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "AuditRecord":
        known = {f for f in cls.__dataclass_fields__}
        record = cls(**{k: v for k, v in doc.items() if k in known})
        record.validate()
        return record


@dataclass(frozen=True)
class OutcomeCell:
    total: int
    success: int
    partial: int
    failed: int

    @property
    def rate(self) -> float:
        return self.success / self.total

    def check(self):
        if self.success + self.partial + self.failed != self.total:
            raise ValueError("outcome counts must partition the total")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate out of range")


@dataclass(frozen=True)
class MultiplierStats:
    mean: float | None
    stddev: float | None
    n: int
    undefined_count: int


@dataclass(frozen=True)
class GapDistribution:
    counts: dict[int, int]
    probabilities: dict[str, float]  # buckets "0", "1", "2", "3+"

    def check(self):
        if self.counts and abs(sum(self.probabilities.values()) - 1.0) > 1e-9:
            raise ValueError("gap probabilities must sum to 1")


@dataclass
class MetricsReport:
    total: int
    overall: OutcomeCell | None
    per_agent: dict[str, OutcomeCell]
    per_language: dict[str, OutcomeCell]
    matrix: dict[tuple[str, str], OutcomeCell]
    gap_distribution: GapDistribution
    multiplier_by_language: dict[str, MultiplierStats]
    multiplier_overall: MultiplierStats
    error_counts: dict[str, int]
    error_counts_by_agent: dict[str, dict[str, int]]
    missing_deps_by_cell: dict[tuple[str, str], dict[str, Any]]
    summary: dict[str, Any]
    notes: list[str] = field(default_factory=list)


def _cell(records: list[AuditRecord]) -> OutcomeCell:
    cell = OutcomeCell(
        total=len(records),
        success=sum(1 for r in records if r.outcome == "Success"),
        partial=sum(1 for r in records if r.outcome == "Partial"),
        failed=sum(1 for r in records if r.outcome == "Failed"),
    )
    cell.check()
    return cell


def executable_reliability(records: list[AuditRecord], group: str | None = None):
    """Fraction of records succeeding out-of-the-box.

    Partial counts as not-success: the rate numerator is strictly the
    out-of-the-box successes.  With ``group`` ("agent" or "language") a
    mapping of group value to rate is returned instead.
    """
    if group is None:
        if not records:
            raise EmptyGroup("no records")
        return sum(1 for r in records if r.out_of_box) / len(records)
    if group not in ("agent", "language"):
        raise ValueError(f"cannot group by {group!r}")
    grouped: dict[str, list[AuditRecord]] = {}
    for record in records:
        grouped.setdefault(getattr(record, group), []).append(record)
    return {key: executable_reliability(subset) for key, subset in sorted(grouped.items())}


def rate_by_language(records: list[AuditRecord]) -> dict[str, float]:
    return executable_reliability(records, group="language")


def agent_language_matrix(records: list[AuditRecord]) -> dict[tuple[str, str], OutcomeCell]:
    """Per (agent, language) outcome cells; empty cells are absent, not 0/0."""
    grouped: dict[tuple[str, str], list[AuditRecord]] = {}
    for record in records:
        grouped.setdefault((record.agent, record.language), []).append(record)
    return {key: _cell(subset) for key, subset in sorted(grouped.items())}


def gap_distribution(records: list[AuditRecord]) -> GapDistribution:
    counts: dict[int, int] = {}
    for record in records:
        counts[record.gap] = counts.get(record.gap, 0) + 1
    total = len(records)
    if total == 0:
        dist = GapDistribution({}, {})
    else:
        buckets = {"0": 0, "1": 0, "2": 0, "3+": 0}
        for gap, n in counts.items():
            buckets[str(gap) if gap < 3 else "3+"] += n
        dist = GapDistribution(dict(sorted(counts.items())), {k: v / total for k, v in buckets.items()})
    dist.check()
    return dist


def multiplier_stats(records: list[AuditRecord], language: str | None = None) -> MultiplierStats:
    """Mean and sample (n-1) standard deviation of runtime multipliers.

    Records with an empty claimed set have no defined multiplier; they are
    excluded from the statistics and counted separately.
    """
    pool = [r for r in records if language is None or r.language == language]
    captured = [r for r in pool if r.runtime is not None]
    defined = [r.multiplier for r in captured if r.multiplier is not None]
    undefined = sum(1 for r in captured if r.multiplier is None)
    if not defined:
        return MultiplierStats(None, None, 0, undefined)
    mean = statistics.fmean(defined)
    stddev = statistics.stdev(defined) if len(defined) > 1 else None
    return MultiplierStats(mean, stddev, len(defined), undefined)


def error_distribution(records: list[AuditRecord]) -> tuple[dict[str, int], dict[str, dict[str, int]]]:
    """Error-category counts, aggregate and per agent, over failed records."""
    aggregate: dict[str, int] = {}
    by_agent: dict[str, dict[str, int]] = {}
    for record in records:
        if record.category is None:
            continue
        aggregate[record.category] = aggregate.get(record.category, 0) + 1
        agent = by_agent.setdefault(record.agent, {})
        agent[record.category] = agent.get(record.category, 0) + 1
    return aggregate, by_agent


@dataclass(frozen=True)
class DebugCostModel:
    """Per-step costs in seconds.

    Defaults are calibrated so a typical failed trace (two fix rounds)
    costs 900 s, i.e. the fifteen minutes of manual debugging a failed
    project historically averages.
    """

    t_understand: float = 240.0
    t_identify: float = 120.0
    t_fix: float = 120.0
    t_verify: float = 180.0

    def __post_init__(self):
        if min(self.t_understand, self.t_identify, self.t_fix, self.t_verify) < 0:
            raise ValueError("cost model values must be non-negative")


def estimate_debug_time(trace, cost: DebugCostModel | None = None) -> float:
    """t_understand + n * (t_identify + t_fix) + t_verify with n the number
    of non-round-0 iterations.

    Accepts a ResolutionTrace, a persisted iteration list, or a bare n.
    """
    cost = cost or DebugCostModel()
    if hasattr(trace, "fix_rounds"):
        n = trace.fix_rounds()
    elif isinstance(trace, int):
        n = trace
    else:
        n = sum(1 for it in trace if it.get("round", 0) > 0)
    return cost.t_understand + n * (cost.t_identify + cost.t_fix) + cost.t_verify


def summary(records: list[AuditRecord]) -> dict[str, Any]:
    """Overall block: totals, outcome counts, incomplete-dependency count,
    mean multiplier."""
    if not records:
        return {
            "total": 0, "success": 0, "partial": 0, "failed": 0,
            "incomplete_deps": 0, "mean_multiplier": None, "empty": True,
        }
    cell = _cell(records)
    stats = multiplier_stats(records)
    return {
        "total": cell.total,
        "success": cell.success,
        "partial": cell.partial,
        "failed": cell.failed,
        "incomplete_deps": sum(1 for r in records if r.gap > 0),
        "mean_multiplier": stats.mean,
        "empty": False,
    }


def build_report(records: list[AuditRecord]) -> MetricsReport:
    """Assemble the full metrics report from a record list."""
    matrix = agent_language_matrix(records)
    total = len(records)
    if sum(cell.total for cell in matrix.values()) != total:
        raise MetricsError("matrix cells must partition the corpus")
    per_agent = {
        agent: _cell([r for r in records if r.agent == agent])
        for agent in sorted({r.agent for r in records})
    }
    per_language = {
        language: _cell([r for r in records if r.language == language])
        for language in sorted({r.language for r in records})
    }
    aggregate_errors, errors_by_agent = error_distribution(records)
    languages = sorted({r.language for r in records})
    notes = []
    if any(r.capture_method == "npm_tree" for r in records):
        notes.append(
            "javascript runtime capture is an install-time tree measure, "
            "unlike python's load-time import trace"
        )
    if any(r.capture_method == "closure_computed" for r in records):
        notes.append(
            "some python records use the closure_computed fallback "
            "(tracer unavailable): runtime = environment inventory growth"
        )
    return MetricsReport(
        total=total,
        overall=_cell(records) if records else None,
        per_agent=per_agent,
        per_language=per_language,
        matrix=matrix,
        gap_distribution=gap_distribution(records),
        multiplier_by_language={lang: multiplier_stats(records, lang) for lang in languages},
        multiplier_overall=multiplier_stats(records),
        error_counts=aggregate_errors,
        error_counts_by_agent=errors_by_agent,
        missing_deps_by_cell=_missing_deps_cells(records, matrix),
        summary=summary(records),
        notes=notes,
    )


def _missing_deps_cells(records, matrix) -> dict[tuple[str, str], dict[str, Any]]:
    cells: dict[tuple[str, str], dict[str, Any]] = {}
    for key, cell in matrix.items():
        subset = [r for r in records if (r.agent, r.language) == key]
        with_missing = [r for r in subset if r.gap > 0]
        cells[key] = {
            "total": cell.total,
            "with_missing": len(with_missing),
            "avg_missing": sum(r.gap for r in subset) / cell.total if cell.total else 0.0,
            "max_gap": max((r.gap for r in subset), default=0),
        }
    return cells
