"""Report rendering.

A MetricsReport renders to markdown (six tables mirroring the study's
shapes), csv (one file per table), or json (the full structure).  Rendering
is a pure function of the report; all formats return a mapping of output
filename to bytes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict
from typing import Any

from .metrics import MetricsReport, MultiplierStats, OutcomeCell

FORMATS = ("markdown", "csv", "json")

# Fixed taxonomy display order: largest observed share first.
CATEGORY_ORDER = ("CodeBug", "NotProcessed", "Other", "Dependency", "Environment")
CATEGORY_LABELS = {
    "CodeBug": "Code Bugs",
    "NotProcessed": "Not Processed",
    "Other": "Other",
    "Dependency": "Dependency",
    "Environment": "Environment",
}


def pct(value: float) -> str:
    return f"{value * 100:.1f}%"


def ratio(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}"


def render_report(report: MetricsReport, format: str = "markdown") -> dict[str, bytes]:
    """Render to the requested format as {filename: bytes}."""
    if format == "markdown":
        return {"report.md": _render_markdown(report).encode("utf-8")}
    if format == "csv":
        return {name: text.encode("utf-8") for name, text in _render_csv(report).items()}
    if format == "json":
        return {"report.json": _render_json(report)}
    raise ValueError(f"unknown report format {format!r} (expected one of {FORMATS})")


# --- table row builders -------------------------------------------------------


def _outcome_rows(report: MetricsReport) -> list[list[str]]:
    rows = []
    for agent, cell in report.per_agent.items():
        rows.append([agent, str(cell.total), str(cell.success), str(cell.partial),
                     str(cell.failed), pct(cell.rate)])
    if report.overall is not None:
        cell = report.overall
        rows.append(["Overall", str(cell.total), str(cell.success), str(cell.partial),
                     str(cell.failed), pct(cell.rate)])
    return rows


def _language_rows(report: MetricsReport) -> list[list[str]]:
    # Mirrors the two-way language table: failed column folds in partials.
    return [
        [language, str(cell.total), str(cell.success),
         str(cell.total - cell.success), pct(cell.rate)]
        for language, cell in report.per_language.items()
    ]


def _matrix_rows(report: MetricsReport) -> list[list[str]]:
    return [
        [agent, language, str(cell.total), str(cell.success),
         str(cell.total - cell.success), pct(cell.rate)]
        for (agent, language), cell in report.matrix.items()
    ]


def _missing_rows(report: MetricsReport) -> list[list[str]]:
    rows = []
    for (agent, language), info in report.missing_deps_by_cell.items():
        share = info["with_missing"] / info["total"] if info["total"] else 0.0
        rows.append([
            agent, language,
            f"{info['with_missing']} ({pct(share)})",
            f"{info['avg_missing']:.2f}",
            str(info["max_gap"]),
        ])
    return rows


def _error_rows(report: MetricsReport) -> list[list[str]]:
    total = sum(report.error_counts.values())
    rows = []
    for category in CATEGORY_ORDER:
        count = report.error_counts.get(category, 0)
        if total == 0:
            continue
        rows.append([CATEGORY_LABELS[category], f"{count} ({pct(count / total)})"])
    if total:
        rows.append(["Total", f"{total} (100.0%)"])
    return rows


def _gap_rows(report: MetricsReport) -> list[list[str]]:
    return [
        [bucket, f"{probability:.2f}"]
        for bucket, probability in report.gap_distribution.probabilities.items()
    ]


def _multiplier_rows(report: MetricsReport) -> list[list[str]]:
    def fmt(stats: MultiplierStats) -> list[str]:
        mean = ratio(stats.mean)
        stddev = ratio(stats.stddev)
        return [mean, stddev, str(stats.n), str(stats.undefined_count)]

    rows = [
        [language, *fmt(stats)]
        for language, stats in report.multiplier_by_language.items()
    ]
    rows.append(["overall", *fmt(report.multiplier_overall)])
    return rows


def _summary_rows(report: MetricsReport) -> list[list[str]]:
    s = report.summary
    total = s["total"] or 1
    return [
        ["Total Projects Analyzed", str(s["total"])],
        ["Successful Executions", f"{s['success']} ({pct(s['success'] / total)})"],
        ["Partial Executions", f"{s['partial']} ({pct(s['partial'] / total)})"],
        ["Failed Executions", f"{s['failed']} ({pct(s['failed'] / total)})"],
        ["Projects with Incomplete Dependencies",
         f"{s['incomplete_deps']} ({pct(s['incomplete_deps'] / total)})"],
        ["Average Runtime Multiplier", ratio(s["mean_multiplier"]) + ("×" if s["mean_multiplier"] is not None else "")],
    ]


_TABLES: tuple[tuple[str, str, list[str], Any], ...] = (
    ("table1_outcomes", "Reproducibility outcomes by agent",
     ["Agent", "Total", "Success", "Partial", "Failed", "Rate"], _outcome_rows),
    ("table2_languages", "Reproducibility by language",
     ["Language", "Total", "Success", "Failed", "Success Rate"], _language_rows),
    ("table3_matrix", "Success rates by agent and language",
     ["Agent", "Language", "Total", "Success", "Failed", "Rate"], _matrix_rows),
    ("table4_missing_deps", "Missing dependencies by agent and language",
     ["Agent", "Language", "Projects with Missing Deps", "Avg Missing Deps", "Max Gap"], _missing_rows),
    ("table5_errors", "Error distribution across failed projects",
     ["Error Type", "Count (%)"], _error_rows),
    ("table6_summary", "Overall summary",
     ["Metric", "Value"], _summary_rows),
)

_EXTRA_TABLES = (
    ("gap_distribution", "Completeness gap distribution",
     ["Gap", "Probability"], _gap_rows),
    ("multipliers", "Runtime multiplier statistics",
     ["Language", "Mean", "Sample StdDev", "N", "Undefined"], _multiplier_rows),
)


def _markdown_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(" --- " for _ in header) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def _render_markdown(report: MetricsReport) -> str:
    parts = ["# Reproducibility audit report", ""]
    for _name, title, header, builder in (*_TABLES, *_EXTRA_TABLES):
        parts.append(f"## {title}")
        parts.append("")
        parts.append(_markdown_table(header, builder(report)))
        parts.append("")
    if report.notes:
        parts.append("## Notes")
        parts.append("")
        for note in report.notes:
            parts.append(f"- {note}")
        parts.append("")
    return "\n".join(parts)


def _render_csv(report: MetricsReport) -> dict[str, str]:
    files = {}
    for name, _title, header, builder in (*_TABLES, *_EXTRA_TABLES):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(builder(report))
        files[f"tables/{name}.csv"] = buffer.getvalue()
    return files


def _json_safe(value: Any) -> Any:
    if isinstance(value, (OutcomeCell, MultiplierStats)):
        doc = asdict(value)
        if isinstance(value, OutcomeCell):
            doc["rate"] = value.rate
        return doc
    if isinstance(value, dict):
        return {
            (",".join(k) if isinstance(k, tuple) else str(k)): _json_safe(v)
            for k, v in value.items()
        }
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _render_json(report: MetricsReport) -> bytes:
    doc = {
        "total": report.total,
        "overall": _json_safe(report.overall),
        "per_agent": _json_safe(report.per_agent),
        "per_language": _json_safe(report.per_language),
        "matrix": _json_safe(report.matrix),
        "gap_distribution": {
            "counts": {str(k): v for k, v in report.gap_distribution.counts.items()},
            "probabilities": report.gap_distribution.probabilities,
        },
        "multiplier_by_language": _json_safe(report.multiplier_by_language),
        "multiplier_overall": _json_safe(report.multiplier_overall),
        "error_counts": report.error_counts,
        "error_counts_by_agent": report.error_counts_by_agent,
        "missing_deps_by_cell": _json_safe(report.missing_deps_by_cell),
        "summary": report.summary,
        "notes": report.notes,
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
