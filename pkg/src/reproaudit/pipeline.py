"""One-project audit orchestration: detect, parse, provision, resolve,
capture, record.

Project-level failures (unparseable manifests, failing executions) become
audit records; harness faults (missing toolchains, storage errors) raise
and are reported separately by the CLI with a distinct exit code.
"""

from __future__ import annotations

import datetime as dt
import logging
import shutil
import time
from dataclasses import dataclass, replace
from pathlib import Path

from . import closure, envmgr, executor, manifest, resolver
from .classifier import ErrorCategory
from .config import HarnessConfig
from .metrics import AuditRecord
from .store import BlobStore

logger = logging.getLogger(__name__)

MANIFEST_BY_ECOSYSTEM = {eco: name for name, eco in manifest.MANIFEST_PRIORITY}


class HarnessFault(Exception):
    """Fault in the harness or host, not in the audited project."""


@dataclass
class AuditRequest:
    root: Path
    agent: str = "unknown"
    prompt_id: str = ""
    language: str | None = None
    entry: str | None = None
    patches_dir: Path | None = None

    def __post_init__(self):
        self.root = Path(self.root)
        if not self.prompt_id:
            self.prompt_id = self.root.name


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def _not_processed(request: AuditRequest, language: str, reason: str, started: float) -> AuditRecord:
    record = AuditRecord(
        agent=request.agent,
        language=language,
        prompt_id=request.prompt_id,
        project_path=str(request.root),
        outcome="Failed",
        out_of_box=False,
        final_status="Unfixable",
        category=ErrorCategory.NOT_PROCESSED.value,
        anomalies=[reason],
        timings={"total": time.monotonic() - started},
        created_at=_now(),
    )
    record.validate()
    return record


def _stage_project(project: manifest.ProjectUnderTest, env: envmgr.EnvHandle) -> manifest.ProjectUnderTest:
    """Copy the project into the environment's workspace.

    Executions and ledger patches touch only the copy, so the corpus stays
    byte-identical across audits; javascript gets the environment's module
    directory linked in so both require() and import resolve.
    """
    staged_root = env.work_dir / "project"
    shutil.copytree(project.root, staged_root, symlinks=True)
    if env.ecosystem == "javascript":
        link = staged_root / "node_modules"
        if not link.exists():
            link.symlink_to(env.node_modules, target_is_directory=True)
    return replace(project, root=staged_root)


def _serialize_result(result: executor.ExecutionResult | None, blobs: BlobStore | None) -> dict | None:
    if result is None:
        return None
    doc = {
        "exit_code": result.exit_code,
        "duration": result.duration,
        "timed_out": result.timed_out,
        "outcome": result.outcome,
        "command": result.command,
        "stdout_truncated": result.stdout_truncated,
        "stderr_truncated": result.stderr_truncated,
    }
    if blobs is not None:
        doc["stdout_sha256"] = blobs.put(result.stdout)
        doc["stderr_sha256"] = blobs.put(result.stderr)
    if result.probe is not None:
        doc["probe"] = {
            "port": result.probe.port,
            "healthy": result.probe.healthy,
            "external_errors": list(result.probe.external_errors),
        }
    return doc


def _serialize_trace(trace: resolver.ResolutionTrace, blobs: BlobStore | None) -> tuple[list[dict], list[dict]]:
    iterations = []
    for it in trace.iterations:
        iterations.append({
            "round": it.round_index,
            "action": it.action,
            "detail": it.detail,
            "outcome": it.outcome,
            "category": it.category.value if it.category else None,
        })
    invocations = []
    for report in trace.installs:
        doc = {
            "command": report.command,
            "exit_code": report.exit_code,
            "packages": list(report.packages),
            "duration": report.duration,
            "attempts": report.attempts,
        }
        if blobs is not None:
            doc["stdout_sha256"] = blobs.put(report.stdout.encode("utf-8", "replace"))
            doc["stderr_sha256"] = blobs.put(report.stderr.encode("utf-8", "replace"))
        invocations.append(doc)
    return iterations, invocations


def _capture_runtime(
    env: envmgr.EnvHandle,
    project: manifest.ProjectUnderTest,
    entry: str,
    config: HarnessConfig,
    baseline: envmgr.BaselineSnapshot,
) -> tuple[closure.RuntimeDeps | None, list[str]]:
    try:
        if env.ecosystem == "python":
            return closure.capture_runtime_python(env, project, entry, config, baseline), []
        if env.ecosystem == "javascript":
            return closure.capture_runtime_js(env, project, config), []
        return closure.capture_runtime_java(env, project, config), []
    except closure.ClosureError as exc:
        logger.warning("runtime capture failed for %s: %s", project.root, exc)
        return None, [f"runtime capture failed: {exc}"]


def audit_project(request: AuditRequest, config: HarnessConfig | None = None) -> AuditRecord:
    """Run the full audit protocol for one project and return its record."""
    config = config or HarnessConfig()
    blobs = BlobStore(config.blob_dir)
    started = time.monotonic()

    # manifest detection and parsing
    try:
        if request.language:
            ecosystem = request.language
            manifest_name = MANIFEST_BY_ECOSYSTEM.get(ecosystem)
            if manifest_name is None:
                raise HarnessFault(f"unknown language {ecosystem!r}")
            manifest_path = request.root / manifest_name
            if not manifest_path.is_file():
                raise manifest.NoManifestFound(f"{manifest_name} not found in {request.root}")
        else:
            ecosystem, manifest_path = manifest.detect_manifest(request.root)
    except manifest.NoManifestFound as exc:
        return _not_processed(request, request.language or "unknown", str(exc), started)

    try:
        claimed = manifest.parse_manifest(ecosystem, manifest_path.read_bytes(), manifest_path)
    except manifest.ManifestError as exc:
        return _not_processed(request, ecosystem, f"manifest parse failed: {exc}", started)

    project = manifest.ProjectUnderTest(
        root=request.root,
        ecosystem=ecosystem,
        manifest_path=manifest_path,
        entry=request.entry,
        agent=request.agent,
        prompt_id=request.prompt_id,
    )
    try:
        entry = executor.determine_entry(project)
    except executor.NoEntryPoint as exc:
        return _not_processed(request, ecosystem, str(exc), started)

    # clean environment, verified against its own creation snapshot
    env = envmgr.create_isolated_env(ecosystem, config)
    try:
        baseline = envmgr.snapshot_inventory(env)
        reset = envmgr.verify_reset(env, baseline)
        if not reset:
            raise HarnessFault(f"fresh environment failed baseline verification: {reset}")

        staged = _stage_project(project, env)
        staged.entry = entry
        patches_dir = request.patches_dir or (request.root / "patches")
        ledger = resolver.PatchLedger(patches_dir if Path(patches_dir).is_dir() else None)

        working, trace = resolver.resolve(env, staged, claimed, ledger, config)
        gap = resolver.completeness_gap(claimed, working)

        runtime = None
        anomalies: list[str] = []
        if trace.final_status == "Success":
            runtime, anomalies = _capture_runtime(env, staged, entry, config, baseline)
            if runtime is not None:
                anomalies.extend(closure.check_layer_nesting(claimed, working, runtime))
        multiplier = closure.runtime_multiplier(len(claimed.packages), len(runtime.packages)) if runtime else None
    finally:
        if config.keep_env:
            logger.info("keeping environment %s at %s", env.id, env.root)
        else:
            try:
                envmgr.destroy(env)
            except envmgr.CleanupFailed as exc:
                logger.error("cleanup failed: %s", exc)

    round0 = trace.round0_result
    outcome = round0.outcome if round0 is not None else "Failed"
    category = None
    if outcome == "Failed":
        round0_category = trace.round0_category
        category = (round0_category or ErrorCategory.OTHER).value
    iterations, invocations = _serialize_trace(trace, blobs)

    record = AuditRecord(
        agent=request.agent,
        language=ecosystem,
        prompt_id=request.prompt_id,
        project_path=str(request.root),
        outcome=outcome,
        out_of_box=trace.out_of_box,
        final_status=trace.final_status,
        claimed=claimed.names(),
        added=sorted(ref.name for ref in working.added),
        runtime=runtime.names() if runtime else None,
        runtime_unmapped=list(runtime.unmapped) if runtime else [],
        capture_method=runtime.capture_method if runtime else None,
        category=category,
        gap=gap,
        multiplier=multiplier,
        entry=entry,
        iterations=iterations,
        round0=_serialize_result(round0, blobs),
        invocations=invocations,
        toolchain=dict(env.toolchain),
        timings={
            "total": time.monotonic() - started,
            "round0": round0.duration if round0 else 0.0,
        },
        anomalies=anomalies,
        created_at=_now(),
    )
    record.validate()
    return record
