"""Iterative dependency resolution.

Round 0 installs exactly the claimed dependencies and executes the project;
only that round decides out-of-the-box success.  Failed rounds are
classified: a missing-import failure installs the extracted package and
retries in the same environment, a code bug consumes the next human-authored
patch from the project's ledger, anything else is unfixable.  The loop is
bounded and each round strictly grows the package set or consumes a patch,
so termination is structural.
"""

from __future__ import annotations

import difflib
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import classifier, envmgr, executor
from .classifier import ErrorCategory
from .config import HarnessConfig
from .manifest import ClaimedDeps, PackageRef, ProjectUnderTest

logger = logging.getLogger(__name__)

FINAL_STATUSES = ("Success", "Unfixable", "ExhaustedIterations")


class ResolverError(Exception):
    pass


class LayerViolation(ResolverError):
    """The working layer does not contain the claimed layer."""


class PatchFailed(ResolverError):
    pass


@dataclass(frozen=True)
class Iteration:
    """One round of the loop.

    ``action`` is None for round 0 (plain execution of the claimed set);
    later rounds carry what was done before re-executing: an installed
    missing package, an applied patch, or an abort reason.
    """

    round_index: int
    action: str | None  # None | "installed_missing" | "applied_patch" | "aborted"
    detail: str = ""
    outcome: str | None = None
    category: ErrorCategory | None = None
    result: executor.ExecutionResult | None = None


@dataclass
class ResolutionTrace:
    iterations: list[Iteration] = field(default_factory=list)
    final_status: str = "Unfixable"
    out_of_box: bool = False
    installs: list[envmgr.InstallReport] = field(default_factory=list)

    def __post_init__(self):
        self._validate()

    def _validate(self):
        if self.final_status not in FINAL_STATUSES:
            raise ValueError(f"unknown final status {self.final_status!r}")
        if self.out_of_box:
            if len(self.iterations) != 1 or self.final_status != "Success":
                raise ValueError("out_of_box requires exactly one successful round")

    @property
    def round0_result(self) -> executor.ExecutionResult | None:
        for it in self.iterations:
            if it.round_index == 0 and it.result is not None:
                return it.result
        return None

    @property
    def round0_category(self) -> ErrorCategory | None:
        for it in self.iterations:
            if it.round_index == 0:
                return it.category
        return None

    def fix_rounds(self) -> int:
        return sum(1 for it in self.iterations if it.round_index > 0)


@dataclass(frozen=True)
class WorkingDeps:
    """Claimed plus everything the loop had to add."""

    packages: frozenset[PackageRef]
    added: frozenset[PackageRef]

    def __post_init__(self):
        if not self.added <= self.packages:
            raise ValueError("added packages must be a subset of the working set")


class PatchLedger:
    """Ordered human-authored unified diffs standing in for manual fixes.

    Layout: ``<dir>/NN-description.diff`` applied in lexical order, one per
    code-bug round.  Application is recorded with the patch id and a content
    hash so a replay can prove it used the same fix.
    """

    def __init__(self, directory: Path | None):
        self.directory = Path(directory) if directory else None
        self._paths = (
            sorted(
                p for p in self.directory.iterdir()
                if p.suffix in (".diff", ".patch") and p.is_file()
            )
            if self.directory and self.directory.is_dir()
            else []
        )
        self._next = 0

    def __len__(self) -> int:
        return len(self._paths)

    def remaining(self) -> int:
        return len(self._paths) - self._next

    def apply_next(self, project_root: Path) -> tuple[str, str]:
        """Apply the next patch; returns (patch id, sha256 of its content)."""
        if self._next >= len(self._paths):
            raise PatchFailed("patch ledger exhausted")
        path = self._paths[self._next]
        self._next += 1
        text = path.read_text("utf-8")
        apply_unified_diff(text, project_root)
        return path.name, hashlib.sha256(text.encode()).hexdigest()


def apply_unified_diff(diff_text: str, root: Path) -> None:
    """Apply a unified diff beneath ``root``.

    Supports file modification and creation with exact context matching
    (strips the conventional a/ b/ prefixes).  Renames and deletions are out
    of scope for a fix ledger and raise :class:`PatchFailed`.
    """
    lines = diff_text.splitlines()
    i = 0
    while i < len(lines):
        if not lines[i].startswith("--- "):
            i += 1
            continue
        old_name = lines[i][4:].split("\t")[0].strip()
        i += 1
        if i >= len(lines) or not lines[i].startswith("+++ "):
            raise PatchFailed(f"missing +++ header after {old_name!r}")
        new_name = lines[i][4:].split("\t")[0].strip()
        i += 1
        if new_name == "/dev/null":
            raise PatchFailed("file deletion is not supported in a patch ledger")
        target = root / _strip_prefix(new_name)
        source_lines = (
            target.read_text("utf-8").splitlines(keepends=True)
            if old_name != "/dev/null" and target.exists()
            else []
        )
        patched = list(source_lines)
        offset = 0
        while i < len(lines) and lines[i].startswith("@@"):
            header = lines[i]
            i += 1
            try:
                old_start = int(header.split("-")[1].split(",")[0].split(" ")[0])
            except (IndexError, ValueError) as exc:
                raise PatchFailed(f"bad hunk header: {header!r}") from exc
            removed: list[str] = []
            added: list[str] = []
            while i < len(lines) and lines[i][:1] in (" ", "-", "+", "\\", ""):
                mark = lines[i][:1]
                body = lines[i][1:]
                if mark == "\\":  # "\ No newline at end of file"
                    i += 1
                    continue
                if mark in (" ", ""):
                    removed.append(body)
                    added.append(body)
                elif mark == "-":
                    removed.append(body)
                else:
                    added.append(body)
                i += 1
                if i < len(lines) and (lines[i].startswith("@@") or lines[i].startswith("--- ")):
                    break
            position = old_start - 1 + offset if old_start > 0 else 0
            current = [l.rstrip("\n") for l in patched[position:position + len(removed)]]
            if current != removed:
                raise PatchFailed(
                    f"context mismatch in {target.name} at line {old_start}: "
                    f"expected {removed!r}, found {current!r}"
                )
            patched[position:position + len(removed)] = [l + "\n" for l in added]
            offset += len(added) - len(removed)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text("".join(patched), "utf-8")


def _strip_prefix(name: str) -> str:
    for prefix in ("a/", "b/"):
        if name.startswith(prefix):
            return name[len(prefix):]
    return name


def make_patch(old_text: str, new_text: str, filename: str) -> str:
    """Build a ledger-ready unified diff (test and tooling helper)."""
    diff = difflib.unified_diff(
        old_text.splitlines(keepends=True),
        new_text.splitlines(keepends=True),
        fromfile=f"a/{filename}",
        tofile=f"b/{filename}",
    )
    return "".join(diff)


def resolve(
    env: envmgr.EnvHandle,
    project: ProjectUnderTest,
    claimed: ClaimedDeps,
    patches: PatchLedger | None = None,
    config: HarnessConfig | None = None,
) -> tuple[WorkingDeps, ResolutionTrace]:
    """Run the iterative resolution loop and return the working layer plus
    the full round-by-round trace.

    The environment accumulates packages across rounds and is never reset
    mid-resolution; the caller destroys it after the audit.  ``out_of_box``
    reflects round 0 alone.
    """
    config = config or HarnessConfig()
    patches = patches or PatchLedger(None)
    entry = project.entry or executor.determine_entry(project)

    current: set[PackageRef] = set(claimed.packages)
    added: set[PackageRef] = set()
    extracted_names: set[str] = set()
    trace = ResolutionTrace(final_status="Unfixable")

    def finish(status: str, out_of_box: bool = False) -> tuple[WorkingDeps, ResolutionTrace]:
        trace.final_status = status
        trace.out_of_box = out_of_box
        trace._validate()
        return WorkingDeps(frozenset(current), frozenset(added)), trace

    try:
        trace.installs.append(envmgr.install(env, current, config))
    except envmgr.InstallError as exc:
        trace.installs.append(exc.report)
        category = (
            ErrorCategory.ENVIRONMENT
            if isinstance(exc, envmgr.NetworkFailure)
            else ErrorCategory.OTHER
        )
        trace.iterations.append(
            Iteration(0, "aborted", f"install failed: {exc}", outcome="Failed", category=category)
        )
        return finish("Unfixable")

    pending_action: tuple[str, str] | None = None  # action carried into the next round
    round_index = 0
    while True:
        result = _execute(env, project, entry, config)
        if result.outcome != "Failed":
            trace.iterations.append(
                Iteration(
                    round_index,
                    pending_action[0] if pending_action else None,
                    pending_action[1] if pending_action else "",
                    outcome=result.outcome,
                    result=result,
                )
            )
            # Partial terminates the loop (nothing installable to fix) but
            # only a round-0 Success counts as out-of-the-box.
            return finish("Success", out_of_box=(round_index == 0 and result.outcome == "Success"))

        category = classifier.classify(result, parse_ok=True, ecosystem=project.ecosystem)
        trace.iterations.append(
            Iteration(
                round_index,
                pending_action[0] if pending_action else None,
                pending_action[1] if pending_action else "",
                outcome=result.outcome,
                category=category,
                result=result,
            )
        )
        if round_index >= config.max_iterations:
            return finish("ExhaustedIterations")

        if category is ErrorCategory.DEPENDENCY:
            try:
                missing = classifier.extract_missing_package(result.stderr + result.stdout, project.ecosystem)
            except (classifier.UnmappedModule, ValueError) as exc:
                trace.iterations.append(
                    Iteration(round_index + 1, "aborted", f"extraction failed: {exc}")
                )
                return finish("Unfixable")
            if missing.resolved.name in extracted_names:
                trace.iterations.append(
                    Iteration(round_index + 1, "aborted", f"no progress: {missing.resolved.name} extracted twice")
                )
                return finish("Unfixable")
            extracted_names.add(missing.resolved.name)
            try:
                trace.installs.append(envmgr.install(env, {missing.resolved}, config))
            except envmgr.InstallError as exc:
                trace.installs.append(exc.report)
                trace.iterations.append(
                    Iteration(round_index + 1, "aborted", f"install failed: {exc}")
                )
                return finish("Unfixable")
            if missing.resolved not in current:
                current.add(missing.resolved)
                added.add(missing.resolved)
            pending_action = ("installed_missing", missing.resolved.name)
        elif category is ErrorCategory.CODE_BUG and patches.remaining() > 0:
            try:
                patch_id, digest = patches.apply_next(project.root)
            except PatchFailed as exc:
                trace.iterations.append(
                    Iteration(round_index + 1, "aborted", f"patch failed: {exc}")
                )
                return finish("Unfixable")
            logger.info("applied patch %s (%s) to %s", patch_id, digest[:12], project.root)
            pending_action = ("applied_patch", f"{patch_id}#{digest[:12]}")
        else:
            return finish("Unfixable")
        round_index += 1


def _execute(env, project, entry, config) -> executor.ExecutionResult:
    try:
        return executor.run(env, project, entry, config.execution_timeout, config)
    except executor.SpawnFailure as exc:
        return executor.ExecutionResult(
            exit_code=127, stdout=b"", stderr=str(exc).encode(), duration=0.0,
            timed_out=False, outcome="Failed", command=entry,
        )


def completeness_gap(claimed: ClaimedDeps, working: WorkingDeps) -> int:
    """How many packages the manifest forgot: |working| - |claimed|."""
    if not set(claimed.packages) <= set(working.packages):
        raise LayerViolation("working set does not contain the claimed set")
    return len(working.packages) - len(claimed.packages)
