"""Run a project's entry command inside its environment and capture a
structured result.

Outcome grading is a pure function of (exit code, timed out, probe result):
a process that exits 0 in time is Success; a process still alive at the
probe mark that has bound a TCP port it announced is treated as a server,
probed, terminated, and graded Success or Partial (healthy but
external-service errors in its streams); everything else is Failed.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shlex
import signal
import socket
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from . import envmgr
from .config import HarnessConfig
from .manifest import ProjectUnderTest

logger = logging.getLogger(__name__)

OUTCOMES = ("Success", "Partial", "Failed")


class ExecutorError(Exception):
    pass


class NoEntryPoint(ExecutorError):
    """No runnable entry command could be determined for the project."""


class SpawnFailure(ExecutorError):
    """The entry command could not be launched at all (distinct from a
    nonzero exit)."""


@dataclass(frozen=True)
class ProbeReport:
    """What the server probe saw: the port tested, whether it accepted a
    connection, and whether external-service error patterns were present."""

    port: int
    healthy: bool
    external_errors: tuple[str, ...] = ()
    terminated_exit_code: int | None = None


@dataclass
class ExecutionResult:
    exit_code: int
    stdout: bytes
    stderr: bytes
    duration: float
    timed_out: bool
    outcome: str
    stdout_truncated: bool = False
    stderr_truncated: bool = False
    probe: ProbeReport | None = None
    command: str = ""

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.outcome == "Success" and (self.exit_code != 0 or self.timed_out):
            raise ValueError("Success requires exit 0 and no timeout")
        if self.timed_out and self.outcome == "Success":
            raise ValueError("timed-out execution cannot be Success")


def classify_outcome(exit_code: int, timed_out: bool, probe: ProbeReport | None) -> str:
    """Deterministic outcome grading from the (exit, timeout, probe) triple."""
    if probe is not None:
        if not probe.healthy:
            return "Failed"
        return "Partial" if probe.external_errors else "Success"
    if timed_out:
        return "Failed"
    return "Success" if exit_code == 0 else "Failed"


# --- entry-point discovery --------------------------------------------------


def _python_entry(root: Path) -> str | None:
    for candidate in ("main.py", "app.py"):
        if (root / candidate).is_file():
            return f"python {candidate}"
    scripts = sorted(p.name for p in root.glob("*.py"))
    if len(scripts) == 1:
        return f"python {scripts[0]}"
    return None


def _js_entry(root: Path) -> str | None:
    pkg_path = root / "package.json"
    if pkg_path.is_file():
        try:
            doc = json.loads(pkg_path.read_text("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            doc = {}
        if isinstance(doc, dict):
            start = (doc.get("scripts") or {}).get("start") if isinstance(doc.get("scripts"), dict) else None
            if isinstance(start, str) and start.strip():
                return start.strip()
            main = doc.get("main")
            if isinstance(main, str) and (root / main).is_file():
                return f"node {main}"
    if (root / "index.js").is_file():  # npm's implicit main
        return "node index.js"
    return None


_JAVA_MAIN_CLASS = re.compile(r"<(?:exec\.)?mainClass>\s*([\w.]+)\s*</(?:exec\.)?mainClass>")
_JAVA_MAIN_METHOD = re.compile(r"public\s+static\s+void\s+main\s*\(")
_JAVA_PACKAGE = re.compile(r"^\s*package\s+([\w.]+)\s*;", re.MULTILINE)


def _java_entry(root: Path) -> str | None:
    pom = root / "pom.xml"
    main_class = None
    if pom.is_file():
        match = _JAVA_MAIN_CLASS.search(pom.read_text("utf-8", errors="replace"))
        if match:
            main_class = match.group(1)
    if main_class is None:
        candidates = []
        for source in sorted(root.rglob("*.java")):
            text = source.read_text("utf-8", errors="replace")
            if _JAVA_MAIN_METHOD.search(text):
                pkg = _JAVA_PACKAGE.search(text)
                fqcn = (pkg.group(1) + "." if pkg else "") + source.stem
                candidates.append(fqcn)
        if len(candidates) == 1:
            main_class = candidates[0]
    if main_class is None:
        return None
    return f"mvn -q -B compile exec:java -Dexec.mainClass={main_class}"


def determine_entry(project: ProjectUnderTest) -> str:
    """Resolve the command to execute for a project.

    An explicit entry from the corpus manifest is used verbatim; otherwise
    ecosystem heuristics apply (main.py/app.py/sole script; scripts.start
    then the main field; declared or sole java main class).
    """
    if project.entry and project.entry.strip():
        return project.entry.strip()
    finder = {"python": _python_entry, "javascript": _js_entry, "java": _java_entry}[project.ecosystem]
    entry = finder(project.root)
    if entry is None:
        raise NoEntryPoint(f"no entry point found for {project.ecosystem} project {project.root}")
    return entry


# --- execution ---------------------------------------------------------------


class _CappedReader(threading.Thread):
    """Drain a pipe into a capped buffer; keep draining past the cap so the
    child never blocks on a full pipe."""

    def __init__(self, stream, cap: int):
        super().__init__(daemon=True)
        self.stream = stream
        self.cap = cap
        self.chunks: list[bytes] = []
        self.size = 0
        self.truncated = False
        self.lock = threading.Lock()
        self.start()

    def run(self):
        try:
            while True:
                # read1 returns as soon as any bytes arrive; plain read would
                # block until EOF and starve the probe's output snapshots
                chunk = self.stream.read1(65536)
                if not chunk:
                    break
                with self.lock:
                    if self.size < self.cap:
                        keep = chunk[: self.cap - self.size]
                        self.chunks.append(keep)
                        self.size += len(keep)
                        if len(keep) < len(chunk):
                            self.truncated = True
                    else:
                        self.truncated = True
        except (OSError, ValueError):
            pass
        finally:
            try:
                self.stream.close()
            except OSError:
                pass

    def snapshot(self) -> bytes:
        with self.lock:
            return b"".join(self.chunks)


# Port announcements in project output ("listening on port 5000", ":8080").
_PORT_PATTERNS = (
    re.compile(rb"port\s+(\d{2,5})", re.IGNORECASE),
    re.compile(rb"(?:localhost|127\.0\.0\.1|0\.0\.0\.0)[:](\d{2,5})"),
    re.compile(rb"listening[^\n]*?[:](\d{2,5})", re.IGNORECASE),
)

_EXTERNAL_SERVICE_PATTERNS = (
    re.compile(rb"connection refused", re.IGNORECASE),
    re.compile(rb"ECONNREFUSED|ECONNRESET|ENOTFOUND|EHOSTUNREACH"),
    re.compile(rb"could not connect|unable to connect|failed to connect", re.IGNORECASE),
    re.compile(rb"(?:database|redis|mongo|postgres|mysql)[^\n]{0,60}(?:unavailable|error|refused|timeout)", re.IGNORECASE),
)


def _announced_ports(output: bytes) -> list[int]:
    ports = []
    for pattern in _PORT_PATTERNS:
        for match in pattern.finditer(output):
            port = int(match.group(1))
            if 1 <= port <= 65535 and port not in ports:
                ports.append(port)
    return ports


def _port_accepts(port: int, timeout: float = 1.0) -> bool:
    try:
        with socket.create_connection(("127.0.0.1", port), timeout=timeout):
            return True
    except OSError:
        return False


def _external_errors(output: bytes) -> tuple[str, ...]:
    found = []
    for pattern in _EXTERNAL_SERVICE_PATTERNS:
        match = pattern.search(output)
        if match:
            found.append(match.group(0).decode("utf-8", errors="replace"))
    return tuple(found)


def _terminate(proc: subprocess.Popen) -> int | None:
    try:
        os.killpg(proc.pid, signal.SIGTERM)
    except (ProcessLookupError, PermissionError):
        pass
    try:
        return proc.wait(timeout=5)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            pass
        return proc.wait()


def run(
    env: envmgr.EnvHandle,
    project: ProjectUnderTest,
    entry: str,
    timeout: float,
    config: HarnessConfig | None = None,
    extra_env: dict[str, str] | None = None,
) -> ExecutionResult:
    """Execute ``entry`` with the project root as working directory.

    The child sees exactly the environment's paths plus the configured
    allowlist, with ``extra_env`` overlaid; stdin is closed so interactive
    prompts fail fast instead of hanging.
    """
    config = config or HarnessConfig()
    if not entry.strip():
        raise NoEntryPoint("empty entry command")
    argv = shlex.split(entry)
    child_env = envmgr.exec_env(env, config)
    if extra_env:
        child_env.update(extra_env)

    started = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=project.root,
            env=child_env,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )
    except FileNotFoundError as exc:
        raise SpawnFailure(f"command not found: {argv[0]}") from exc
    except PermissionError as exc:
        raise SpawnFailure(f"command not executable: {argv[0]}") from exc

    env.active_pid = proc.pid
    out_reader = _CappedReader(proc.stdout, config.stream_cap)
    err_reader = _CappedReader(proc.stderr, config.stream_cap)

    probe: ProbeReport | None = None
    timed_out = False
    next_probe = started + min(config.server_probe_after, timeout)
    deadline = started + timeout

    try:
        while True:
            code = proc.poll()
            if code is not None:
                break
            now = time.monotonic()
            if now >= next_probe:
                next_probe = now + 1.0  # announced ports are retried each pass
                output = out_reader.snapshot() + err_reader.snapshot()
                for port in _announced_ports(output):
                    if _port_accepts(port, timeout=min(config.server_probe_window, 1.0)):
                        probe = ProbeReport(
                            port=port,
                            healthy=True,
                            external_errors=_external_errors(output),
                            terminated_exit_code=_terminate(proc),
                        )
                        break
                if probe is not None:
                    break
            if now >= deadline:
                timed_out = True
                _terminate(proc)
                break
            time.sleep(0.05)

        exit_code = proc.wait()
    finally:
        env.active_pid = None
    out_reader.join(timeout=5)
    err_reader.join(timeout=5)
    duration = time.monotonic() - started

    outcome = classify_outcome(exit_code, timed_out, probe)
    if probe is not None and probe.healthy:
        # Harness-initiated shutdown of a healthy server: the child did not
        # fail, so the signal exit is not its verdict.
        exit_code = 0
    return ExecutionResult(
        exit_code=exit_code,
        stdout=out_reader.snapshot(),
        stderr=err_reader.snapshot(),
        duration=duration,
        timed_out=timed_out,
        outcome=outcome,
        stdout_truncated=out_reader.truncated,
        stderr_truncated=err_reader.truncated,
        probe=probe,
        command=entry,
    )
