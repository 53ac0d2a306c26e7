"""Shared fixtures: synthetic package mirrors, project scaffolds, and
paper-count record corpora."""

from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
import shutil
import tarfile
import time
import zipfile
from pathlib import Path

import pytest

from reproaudit.config import HarnessConfig
from reproaudit.metrics import AuditRecord

HAVE_NODE = shutil.which("node") is not None and shutil.which("npm") is not None
HAVE_MVN = shutil.which("mvn") is not None and shutil.which("java") is not None

requires_node = pytest.mark.skipif(not HAVE_NODE, reason="node/npm not on host")
requires_mvn = pytest.mark.skipif(not HAVE_MVN, reason="java/mvn not on host")


@pytest.fixture(autouse=True)
def _clean_harness_env(monkeypatch):
    # Keep runs hermetic: no ambient home or tracer configuration.
    monkeypatch.delenv("REPRO_AUDIT_HOME", raising=False)
    monkeypatch.delenv("REPRO_TRACER_DIR", raising=False)


# --- synthetic packages -------------------------------------------------------


def make_wheel(
    dest_dir: Path,
    name: str,
    version: str,
    requires: tuple[str, ...] = (),
    module_body: str = "VALUE = 1\n",
    module_name: str | None = None,
) -> Path:
    """Build a minimal pure-python wheel pip can install from a mirror dir."""
    module = module_name or name.replace("-", "_")
    dist = name.replace("-", "_")
    wheel_path = Path(dest_dir) / f"{dist}-{version}-py3-none-any.whl"
    dist_info = f"{dist}-{version}.dist-info"
    metadata = [f"Metadata-Version: 2.1", f"Name: {name}", f"Version: {version}"]
    metadata += [f"Requires-Dist: {req}" for req in requires]
    files = {
        f"{module}/__init__.py": module_body,
        f"{dist_info}/METADATA": "\n".join(metadata) + "\n",
        f"{dist_info}/WHEEL": (
            "Wheel-Version: 1.0\nGenerator: fixture\nRoot-Is-Purelib: true\nTag: py3-none-any\n"
        ),
        f"{dist_info}/top_level.txt": module + "\n",
    }
    rows = []
    with zipfile.ZipFile(wheel_path, "w") as archive:
        for arcname, text in files.items():
            data = text.encode()
            archive.writestr(arcname, data)
            digest = base64.urlsafe_b64encode(hashlib.sha256(data).digest()).rstrip(b"=").decode()
            rows.append((arcname, f"sha256={digest}", str(len(data))))
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerows(rows)
        writer.writerow((f"{dist_info}/RECORD", "", ""))
        archive.writestr(f"{dist_info}/RECORD", buffer.getvalue())
    return wheel_path


def make_npm_tarball(
    dest_dir: Path,
    name: str,
    version: str,
    deps: dict[str, str] | None = None,
    main_body: str = "module.exports = { value: 1 };\n",
) -> Path:
    """Build a minimal npm package tarball installable by path."""
    pkg = {"name": name, "version": version, "main": "index.js"}
    if deps:
        pkg["dependencies"] = deps
    files = {
        "package/package.json": json.dumps(pkg, indent=2),
        "package/index.js": main_body,
    }
    tar_path = Path(dest_dir) / f"{name.replace('/', '-').lstrip('@')}-{version}.tgz"
    with tarfile.open(tar_path, "w:gz") as archive:
        for arcname, text in files.items():
            data = text.encode()
            info = tarfile.TarInfo(arcname)
            info.size = len(data)
            info.mtime = int(time.time())
            archive.addfile(info, io.BytesIO(data))
    return tar_path


@pytest.fixture(scope="session")
def py_mirror(tmp_path_factory) -> Path:
    mirror = tmp_path_factory.mktemp("py-mirror")
    make_wheel(mirror, "leafpkg", "1.0.0")
    make_wheel(
        mirror, "midpkg", "2.0.0", requires=("leafpkg",),
        module_body="import leafpkg\nVALUE = leafpkg.VALUE + 1\n",
    )
    for suffix in "abcde":
        make_wheel(mirror, f"pkg-{suffix}", "1.0.0")
    # distribution whose import name differs from its package name
    make_wheel(mirror, "misnamed", "1.0.0", module_name="misnamed_internal")
    return mirror


@pytest.fixture(scope="session")
def js_mirror(tmp_path_factory) -> Path:
    mirror = tmp_path_factory.mktemp("js-mirror")
    leaf = make_npm_tarball(mirror, "leafjs", "1.0.0")
    make_npm_tarball(
        mirror, "midjs", "2.0.0", deps={"leafjs": f"file:{leaf}"},
        main_body="const leaf = require('leafjs');\nmodule.exports = { value: leaf.value + 1 };\n",
    )
    make_npm_tarball(mirror, "extrajs", "1.0.0")
    return mirror


def offline_config(home: Path, py_mirror: Path | None = None, js_mirror: Path | None = None,
                   **overrides) -> HarnessConfig:
    mirrors = {}
    if py_mirror is not None:
        mirrors["python"] = py_mirror
    if js_mirror is not None:
        mirrors["javascript"] = js_mirror
    return HarnessConfig(home=home, offline=True, mirrors=mirrors, **overrides)


# --- project scaffolds ----------------------------------------------------------


def write_python_project(root: Path, requirements: str = "", files: dict[str, str] | None = None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "requirements.txt").write_text(requirements, "utf-8")
    for name, body in (files or {"main.py": "print('ok')\n"}).items():
        path = root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(body, "utf-8")
    return root


def write_js_project(root: Path, package_json: dict | None = None, files: dict[str, str] | None = None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    doc = package_json or {"name": "fixture", "version": "1.0.0", "main": "index.js"}
    (root / "package.json").write_text(json.dumps(doc, indent=2), "utf-8")
    for name, body in (files or {"index.js": "console.log('ok');\n"}).items():
        path = root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(body, "utf-8")
    return root


# --- paper-count record corpora --------------------------------------------------

AGENTS = ("Claude", "Gemini", "Codex")
LANGUAGES = ("python", "javascript", "java")

# (agent, language) -> (total, success) from the published per-cell counts.
TABLE3_CELLS: dict[tuple[str, str], tuple[int, int]] = {
    ("Claude", "python"): (40, 32),
    ("Claude", "javascript"): (35, 21),
    ("Claude", "java"): (25, 20),
    ("Gemini", "python"): (40, 40),
    ("Gemini", "javascript"): (35, 25),
    ("Gemini", "java"): (25, 7),
    ("Codex", "python"): (40, 35),
    ("Codex", "javascript"): (35, 19),
    ("Codex", "java"): (25, 6),
}

# partials per agent, all placed in the javascript cells (which have room)
PARTIALS = {"Claude": 5, "Gemini": 4, "Codex": 5}

# 13 records with a completeness gap of 1, placed on failed cells
GAP_ONE_CELLS = {
    ("Claude", "python"): 4,
    ("Claude", "java"): 1,
    ("Gemini", "javascript"): 4,
    ("Codex", "python"): 3,
    ("Codex", "javascript"): 1,
}


def make_record(
    agent: str = "Claude",
    language: str = "python",
    prompt_id: str = "p0",
    outcome: str = "Success",
    category: str | None = None,
    gap: int = 0,
    claimed: list[str] | None = None,
    runtime: list[str] | None = None,
    multiplier: float | None = None,
    capture_method: str | None = None,
) -> AuditRecord:
    success = outcome == "Success"
    record = AuditRecord(
        agent=agent,
        language=language,
        prompt_id=prompt_id,
        project_path=f"/corpus/{agent}/{prompt_id}",
        outcome=outcome,
        out_of_box=success,
        final_status="Success" if success else "Unfixable",
        claimed=claimed if claimed is not None else ["pkg"],
        added=[f"missing{i}" for i in range(gap)],
        runtime=runtime,
        capture_method=capture_method or ("closure_computed" if runtime is not None else None),
        category=category if outcome == "Failed" else None,
        gap=gap,
        multiplier=multiplier,
        created_at="2026-01-01T00:00:00+00:00",
    )
    record.validate()
    return record


def table3_records() -> list[AuditRecord]:
    """300 records matching the published per-cell counts, partials in the
    javascript cells, and 13 gap-1 records on failed cells."""
    records = []
    for (agent, language), (total, success) in TABLE3_CELLS.items():
        partial = PARTIALS[agent] if language == "javascript" else 0
        gap_ones = GAP_ONE_CELLS.get((agent, language), 0)
        failed = total - success - partial
        index = 0
        for _ in range(success):
            records.append(make_record(agent, language, f"{language[:2]}{index:03d}", "Success"))
            index += 1
        for _ in range(partial):
            records.append(make_record(agent, language, f"{language[:2]}{index:03d}", "Partial"))
            index += 1
        for fail_index in range(failed):
            gap = 1 if fail_index < gap_ones else 0
            category = "Dependency" if gap else "Other"
            records.append(
                make_record(agent, language, f"{language[:2]}{index:03d}", "Failed",
                            category=category, gap=gap)
            )
            index += 1
    return records


TABLE5_COUNTS = {
    "CodeBug": 50,
    "NotProcessed": 16,
    "Other": 15,
    "Dependency": 10,
    "Environment": 4,
}


def table5_records() -> list[AuditRecord]:
    """95 failed records with the published error-category counts."""
    records = []
    index = 0
    for category, count in TABLE5_COUNTS.items():
        for _ in range(count):
            records.append(
                make_record("Claude", "python", f"f{index:03d}", "Failed", category=category)
            )
            index += 1
    return records


GAP_FIXTURE = ((0, 261), (1, 24), (2, 9), (3, 6))


def gap_fixture_records() -> list[AuditRecord]:
    """300 records with gaps 261x0, 24x1, 9x2, 6x3."""
    records = []
    index = 0
    for gap, count in GAP_FIXTURE:
        for _ in range(count):
            if gap == 0:
                records.append(make_record("Gemini", "python", f"g{index:03d}", "Success"))
            else:
                records.append(
                    make_record("Gemini", "python", f"g{index:03d}", "Failed",
                                category="Dependency", gap=gap)
                )
            index += 1
    return records
