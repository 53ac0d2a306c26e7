from __future__ import annotations

import json
import threading

import pytest

from conftest import make_record, table3_records, table5_records
from reproaudit import report as report_mod
from reproaudit.metrics import build_report
from reproaudit.store import (
    BlobStore,
    ResultsStore,
    SchemaVersionMismatch,
    SerializationError,
    append_record,
    load_records,
    recorded_keys,
)


@pytest.fixture
def store(tmp_path) -> ResultsStore:
    return ResultsStore(tmp_path / "audits.jsonl")


class TestStore:
    def test_append_grows_by_one_line(self, store):
        append_record(store, make_record())
        assert len(store.path.read_text().splitlines()) == 1

    def test_round_trip_identity(self, store):
        record = make_record(outcome="Failed", category="Dependency", gap=1,
                             runtime=["a", "b"], multiplier=2.0)
        append_record(store, record)
        (loaded,) = load_records(store)
        assert loaded == record

    def test_invariant_violation_is_serialization_error(self, store):
        record = make_record()
        record.category = "Other"  # out_of_box + category violates the record contract
        with pytest.raises(SerializationError):
            append_record(store, record)
        assert not store.path.exists()

    def test_concurrent_appends_keep_lines_intact(self, store):
        def worker(worker_id: int):
            for i in range(10):
                append_record(store, make_record(prompt_id=f"w{worker_id}-{i}"))

        threads = [threading.Thread(target=worker, args=(w,)) for w in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        lines = store.path.read_text().splitlines()
        assert len(lines) == 80
        for line in lines:
            json.loads(line)  # every line is a complete record
        assert len(load_records(store)) == 80

    def test_empty_store(self, store):
        assert load_records(store) == []

    def test_filters(self, store):
        append_record(store, make_record(language="python", prompt_id="p1"))
        append_record(store, make_record(language="java", prompt_id="p2"))
        append_record(store, make_record(language="java", prompt_id="p3"))
        assert len(load_records(store, {"language": "java"})) == 2
        assert len(load_records(store, {"language": "python"})) == 1

    def test_corrupt_lines_reported_not_skipped_silently(self, store):
        append_record(store, make_record(prompt_id="good1"))
        with open(store.path, "a") as handle:
            handle.write("{broken json\n")
            handle.write('{"schema_version": 1, "bogus": true}\n')
        append_record(store, make_record(prompt_id="good2"))
        seen: list[tuple[int, str]] = []
        records = load_records(store, on_corrupt=lambda n, reason: seen.append((n, reason)))
        assert [r.prompt_id for r in records] == ["good1", "good2"]
        assert [n for n, _ in seen] == [2, 3]

    def test_schema_version_mismatch(self, store):
        doc = make_record().to_json()
        doc["schema_version"] = 99
        store.path.write_text(json.dumps(doc) + "\n")
        with pytest.raises(SchemaVersionMismatch):
            load_records(store)

    def test_recorded_keys(self, store):
        append_record(store, make_record(agent="Claude", prompt_id="p1"))
        assert recorded_keys(store) == {("Claude", "p1")}

    def test_aggregate_after_reload_equals_before(self, store):
        records = table3_records()
        for record in records:
            append_record(store, record)
        reloaded = load_records(store)
        assert build_report(reloaded).summary == build_report(records).summary

    def test_claimed_set_round_trips_through_store(self, store):
        from reproaudit.manifest import PackageRef, parse_requirements

        claimed = parse_requirements(b"Flask==2.0.1\nrequests>=2\n")
        record = make_record(claimed=claimed.names())
        append_record(store, record)
        (loaded,) = load_records(store)
        rebuilt = frozenset(PackageRef("python", name) for name in loaded.claimed)
        assert rebuilt == claimed.packages  # identity is (ecosystem, name)


class TestBlobStore:
    def test_put_get_round_trip(self, tmp_path):
        blobs = BlobStore(tmp_path / "blobs")
        digest = blobs.put(b"hello streams")
        assert blobs.get(digest) == b"hello streams"
        assert digest in blobs

    def test_content_addressed_dedup(self, tmp_path):
        blobs = BlobStore(tmp_path / "blobs")
        assert blobs.put(b"x") == blobs.put(b"x")
        assert len(list((tmp_path / "blobs").iterdir())) == 1


class TestRender:
    def test_markdown_has_paper_overall_rate(self):
        report = build_report(table3_records())
        rendered = report_mod.render_report(report, "markdown")["report.md"].decode()
        assert "| Overall | 300 | 205 | 14 | 81 | 68.3% |" in rendered
        assert "| Claude | 100 | 73 | 5 | 22 | 73.0% |" in rendered

    def test_markdown_language_table(self):
        report = build_report(table3_records())
        rendered = report_mod.render_report(report, "markdown")["report.md"].decode()
        assert "| python | 120 | 107 | 13 | 89.2% |" in rendered
        assert "| java | 75 | 33 | 42 | 44.0% |" in rendered

    def test_error_table_percentages(self):
        report = build_report(table5_records())
        rendered = report_mod.render_report(report, "markdown")["report.md"].decode()
        for expected in ("| Code Bugs | 50 (52.6%) |", "| Not Processed | 16 (16.8%) |",
                         "| Other | 15 (15.8%) |", "| Dependency | 10 (10.5%) |",
                         "| Environment | 4 (4.2%) |"):
            assert expected in rendered

    def test_csv_one_file_per_table(self):
        report = build_report(table3_records())
        files = report_mod.render_report(report, "csv")
        assert "tables/table1_outcomes.csv" in files
        assert "tables/table3_matrix.csv" in files
        matrix_rows = files["tables/table3_matrix.csv"].decode().strip().splitlines()
        assert len(matrix_rows) == 9 + 1  # matrix cells + header

    def test_empty_report_headers_only(self):
        report = build_report([])
        files = report_mod.render_report(report, "csv")
        for data in files.values():
            lines = data.decode().strip().splitlines()
            assert len(lines) >= 1  # header row survives
        markdown = report_mod.render_report(report, "markdown")["report.md"].decode()
        assert "## Reproducibility outcomes by agent" in markdown

    def test_json_structure(self):
        report = build_report(table3_records())
        doc = json.loads(report_mod.render_report(report, "json")["report.json"])
        assert doc["total"] == 300
        assert doc["summary"]["success"] == 205
        assert doc["per_agent"]["Claude"]["rate"] == pytest.approx(0.73)

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            report_mod.render_report(build_report([]), "pdf")

    def test_rendering_is_pure(self):
        report = build_report(table3_records())
        first = report_mod.render_report(report, "markdown")
        second = report_mod.render_report(report, "markdown")
        assert first == second
