"""Isolated per-audit environments.

Each audit gets a throwaway directory owned exclusively by one environment
handle: a fresh venv for python, an empty project-local module directory
for javascript, a dedicated local artifact repository for java.  Every
execution starts from a verified baseline inventory and the directory is
destroyed afterwards, so no residual package from one audit can help the
next one succeed.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import shutil
import subprocess
import sys
import tempfile
import threading
import time
import uuid
import venv
from dataclasses import dataclass, field
from pathlib import Path

from .config import HarnessConfig
from .manifest import PackageRef

logger = logging.getLogger(__name__)


class EnvError(Exception):
    pass


class ToolchainMissing(EnvError):
    def __init__(self, ecosystem: str, probe: str):
        self.ecosystem = ecosystem
        self.probe = probe
        super().__init__(f"{ecosystem} toolchain missing (probe failed: {probe})")


class QueryFailed(EnvError):
    pass


class CleanupFailed(EnvError):
    pass


@dataclass
class InstallReport:
    ok: bool
    packages: tuple[str, ...]
    command: str
    exit_code: int
    stdout: str
    stderr: str
    duration: float
    attempts: int = 1


class InstallError(EnvError):
    """Installer invocation failed; the report carries the evidence."""

    def __init__(self, message: str, report: InstallReport):
        self.report = report
        super().__init__(message)


class ResolutionConflict(InstallError):
    pass


class UnknownPackage(InstallError):
    pass


class NetworkFailure(InstallError):
    pass


@dataclass(frozen=True)
class BaselineSnapshot:
    """Sorted (name, version) inventory of an environment at one instant."""

    entries: tuple[tuple[str, str], ...]
    count: int
    captured_at: str

    def __post_init__(self):
        if self.count != len(self.entries):
            raise ValueError("count must equal number of entries")
        names = [name for name, _ in self.entries]
        if names != sorted(names) or len(names) != len(set(names)):
            raise ValueError("entries must be sorted by name without duplicates")

    @classmethod
    def from_pairs(cls, pairs) -> "BaselineSnapshot":
        dedup: dict[str, str] = {}
        for name, version in pairs:
            # a duplicate name keeps the greatest version, deterministically
            if name not in dedup or version > dedup[name]:
                dedup[name] = version
        entries = tuple(sorted(dedup.items()))
        return cls(entries, len(entries), dt.datetime.now(dt.timezone.utc).isoformat())


@dataclass
class ResetReport:
    ok: bool
    missing: tuple[tuple[str, str], ...] = ()
    extra: tuple[tuple[str, str], ...] = ()

    def __bool__(self) -> bool:
        return self.ok


@dataclass
class EnvHandle:
    id: str
    ecosystem: str
    root: Path
    state: str = "fresh"  # fresh -> installed -> destroyed
    toolchain: dict[str, str] = field(default_factory=dict)
    active_pid: int | None = None
    # accumulated java dependency set (maven resolves from a full pom)
    java_deps: dict[str, PackageRef] = field(default_factory=dict)

    @property
    def venv_dir(self) -> Path:
        return self.root / "venv"

    @property
    def python(self) -> Path:
        return self.venv_dir / "bin" / "python"

    @property
    def app_dir(self) -> Path:
        return self.root / "app"

    @property
    def node_modules(self) -> Path:
        return self.app_dir / "node_modules"

    @property
    def maven_repo(self) -> Path:
        return self.root / "repo"

    @property
    def home_dir(self) -> Path:
        return self.root / "home"

    @property
    def tmp_dir(self) -> Path:
        return self.root / "tmp"

    @property
    def work_dir(self) -> Path:
        return self.root / "work"

    def _check_live(self):
        if self.state == "destroyed":
            raise QueryFailed(f"environment {self.id} is destroyed")


_live_roots: dict[str, Path] = {}
_registry_lock = threading.Lock()


def _register(handle: EnvHandle):
    with _registry_lock:
        for other_id, other_root in _live_roots.items():
            if other_root == handle.root:
                raise EnvError(f"root {handle.root} already owned by env {other_id}")
        _live_roots[handle.id] = handle.root


def _unregister(handle: EnvHandle):
    with _registry_lock:
        _live_roots.pop(handle.id, None)


def _probe_tool(name: str, version_args: tuple[str, ...] = ("--version",)) -> str | None:
    path = shutil.which(name)
    if path is None:
        return None
    try:
        proc = subprocess.run(
            [path, *version_args], capture_output=True, text=True, timeout=30
        )
    except (OSError, subprocess.TimeoutExpired):
        return None
    out = (proc.stdout or proc.stderr).strip().splitlines()
    return out[0] if out else ""


def create_isolated_env(ecosystem: str, config: HarnessConfig | None = None) -> EnvHandle:
    """Provision a fresh environment whose inventory equals the baseline."""
    config = config or HarnessConfig()
    config.envs_root.mkdir(parents=True, exist_ok=True)

    toolchain: dict[str, str] = {}
    if ecosystem == "python":
        toolchain["python"] = f"python {sys.version.split()[0]}"
    elif ecosystem == "javascript":
        for tool in ("node", "npm"):
            version = _probe_tool(tool)
            if version is None:
                raise ToolchainMissing(ecosystem, f"{tool} --version")
            toolchain[tool] = version
    elif ecosystem == "java":
        for tool in ("java", "mvn"):
            version = _probe_tool(tool, ("-version",) if tool == "java" else ("--version",))
            if version is None:
                raise ToolchainMissing(ecosystem, f"{tool} -version")
            toolchain[tool] = version
    else:
        raise ValueError(f"unknown ecosystem {ecosystem!r}")

    root = Path(tempfile.mkdtemp(prefix=f"repro-{ecosystem}-", dir=config.envs_root))
    handle = EnvHandle(id=f"{ecosystem}-{uuid.uuid4().hex[:12]}", ecosystem=ecosystem, root=root)
    handle.toolchain = toolchain
    try:
        for directory in (handle.home_dir, handle.tmp_dir, handle.work_dir):
            directory.mkdir()
        if ecosystem == "python":
            venv.create(handle.venv_dir, with_pip=True)
        elif ecosystem == "javascript":
            handle.app_dir.mkdir()
            handle.node_modules.mkdir()
            (handle.root / "npm-cache").mkdir()
            _write_env_package_json(handle, {})
        else:
            handle.maven_repo.mkdir()
            handle.app_dir.mkdir()
            _write_env_pom(handle)
    except Exception:
        shutil.rmtree(root, ignore_errors=True)
        raise
    _register(handle)
    logger.debug("created %s env at %s", ecosystem, root)
    return handle


def _write_env_package_json(env: EnvHandle, dependencies: dict[str, str]):
    doc = {
        "name": "repro-audit-env",
        "version": "0.0.0",
        "private": True,
        "dependencies": dependencies,
    }
    (env.app_dir / "package.json").write_text(json.dumps(doc, indent=2) + "\n", "utf-8")


_POM_TEMPLATE = """<?xml version="1.0" encoding="UTF-8"?>
<project xmlns="http://maven.apache.org/POM/4.0.0">
  <modelVersion>4.0.0</modelVersion>
  <groupId>local.reproaudit</groupId>
  <artifactId>env</artifactId>
  <version>0.0.0</version>
  <packaging>pom</packaging>
  <dependencies>
{dependencies}
  </dependencies>
</project>
"""


def _write_env_pom(env: EnvHandle):
    blocks = []
    for ref in sorted(env.java_deps.values(), key=lambda r: r.name):
        group, artifact = ref.name.split(":", 1)
        version = ref.version_spec or "RELEASE"
        scope = ref.scope or "compile"
        blocks.append(
            "    <dependency>\n"
            f"      <groupId>{group}</groupId>\n"
            f"      <artifactId>{artifact}</artifactId>\n"
            f"      <version>{version}</version>\n"
            f"      <scope>{scope if scope != 'dev' else 'compile'}</scope>\n"
            "    </dependency>"
        )
    (env.app_dir / "pom.xml").write_text(
        _POM_TEMPLATE.format(dependencies="\n".join(blocks)), "utf-8"
    )


# --- inventory ---------------------------------------------------------------

_PY_LIST_SNIPPET = (
    "import importlib.metadata as m\n"
    "for d in m.distributions():\n"
    "    print(d.metadata['Name'], d.version, sep='\\t')\n"
)


def snapshot_inventory(env: EnvHandle) -> BaselineSnapshot:
    """List every installed package with its version."""
    env._check_live()
    if env.ecosystem == "python":
        proc = subprocess.run(
            [str(env.python), "-I", "-c", _PY_LIST_SNIPPET],
            capture_output=True, text=True, timeout=120,
        )
        if proc.returncode != 0:
            raise QueryFailed(f"distribution listing failed: {proc.stderr}")
        pairs = []
        for line in proc.stdout.splitlines():
            name, _, version = line.partition("\t")
            if name:
                pairs.append((name.strip(), version.strip()))
        return BaselineSnapshot.from_pairs(pairs)
    if env.ecosystem == "javascript":
        return BaselineSnapshot.from_pairs(_walk_node_modules(env.node_modules))
    return BaselineSnapshot.from_pairs(_walk_maven_repo(env.maven_repo))


def _walk_node_modules(node_modules: Path):
    if not node_modules.is_dir():
        return
    stack = [node_modules]
    while stack:
        base = stack.pop()
        try:
            children = sorted(base.iterdir())
        except OSError as exc:
            raise QueryFailed(f"cannot enumerate {base}: {exc}") from exc
        for child in children:
            if not child.is_dir() or child.name.startswith("."):
                continue
            if child.name.startswith("@"):
                stack.append(child)
                continue
            meta = child / "package.json"
            if meta.is_file():
                try:
                    doc = json.loads(meta.read_text("utf-8"))
                    name = doc.get("name") or child.name
                    version = str(doc.get("version", "unknown"))
                except (json.JSONDecodeError, UnicodeDecodeError):
                    name, version = child.name, "unknown"
                yield name, version
                nested = child / "node_modules"
                if nested.is_dir():
                    stack.append(nested)


def _walk_maven_repo(repo: Path):
    if not repo.is_dir():
        return
    for pom in sorted(repo.rglob("*.pom")):
        version_dir = pom.parent
        artifact_dir = version_dir.parent
        group = ".".join(artifact_dir.parent.relative_to(repo).parts)
        yield f"{group}:{artifact_dir.name}", version_dir.name


def verify_reset(env: EnvHandle, baseline: BaselineSnapshot) -> ResetReport:
    """Full (name, version) equality against the baseline.

    Stricter than count equality on purpose: equal counts can hide one
    package swapped for another.
    """
    current = snapshot_inventory(env)
    if current.entries == baseline.entries:
        return ResetReport(ok=True)
    current_set = set(current.entries)
    baseline_set = set(baseline.entries)
    return ResetReport(
        ok=False,
        missing=tuple(sorted(baseline_set - current_set)),
        extra=tuple(sorted(current_set - baseline_set)),
    )


# --- install -----------------------------------------------------------------

_NETWORK_ERROR_MARKERS = (
    "Temporary failure in name resolution",
    "Connection refused",
    "ConnectTimeoutError",
    "ReadTimeoutError",
    "ENOTFOUND",
    "ECONNRESET",
    "ETIMEDOUT",
    "network is unreachable",
    "Could not transfer artifact",
)


def _run_installer(cmd: list[str], cwd: Path, env_vars: dict[str, str], timeout: float) -> tuple[int, str, str, float]:
    started = time.monotonic()
    try:
        proc = subprocess.run(
            cmd, cwd=cwd, env=env_vars, capture_output=True, text=True,
            timeout=timeout, stdin=subprocess.DEVNULL,
        )
        return proc.returncode, proc.stdout, proc.stderr, time.monotonic() - started
    except subprocess.TimeoutExpired as exc:
        stdout = exc.stdout.decode("utf-8", "replace") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
        stderr = exc.stderr.decode("utf-8", "replace") if isinstance(exc.stderr, bytes) else (exc.stderr or "")
        return -1, stdout, stderr + f"\ninstaller timed out after {timeout}s", time.monotonic() - started


def _installer_env(env: EnvHandle, config: HarnessConfig) -> dict[str, str]:
    vars_ = {
        "PATH": config.base_path,
        "HOME": str(env.home_dir),
        "TMPDIR": str(env.tmp_dir),
    }
    for key in config.env_allowlist:
        value = os.environ.get(key)
        if value:
            vars_[key] = value
    if env.ecosystem == "python":
        vars_["PATH"] = f"{env.venv_dir / 'bin'}:{vars_['PATH']}"
        vars_["VIRTUAL_ENV"] = str(env.venv_dir)
        vars_["PIP_DISABLE_PIP_VERSION_CHECK"] = "1"
    elif env.ecosystem == "javascript":
        vars_["npm_config_cache"] = str(env.root / "npm-cache")
        vars_["npm_config_update_notifier"] = "false"
    return vars_


def install(env: EnvHandle, deps, config: HarnessConfig | None = None) -> InstallReport:
    """Install a dependency set with the ecosystem's own installer, confined
    to the environment root.

    Raises :class:`ResolutionConflict`, :class:`UnknownPackage` or
    :class:`NetworkFailure` (the latter after the configured retries).
    """
    config = config or HarnessConfig()
    env._check_live()
    refs = sorted(deps, key=lambda r: r.name)
    names = tuple(ref.name for ref in refs)
    if not refs:
        env.state = "installed"
        return InstallReport(True, names, "", 0, "", "", 0.0)

    if env.ecosystem == "python":
        cmd = [str(env.python), "-m", "pip", "install", "--no-input", "--disable-pip-version-check"]
        if config.offline:
            mirror = config.mirror_for("python")
            if mirror is None:
                raise EnvError("offline mode requires a python mirror directory")
            cmd += ["--no-index", "--find-links", str(mirror)]
        cmd += [ref.spec_string() for ref in refs]
        cwd = env.root
    elif env.ecosystem == "javascript":
        current = json.loads((env.app_dir / "package.json").read_text("utf-8"))
        dependencies = current.get("dependencies", {})
        for ref in refs:
            dependencies[ref.name] = _js_install_spec(ref, config)
        _write_env_package_json(env, dependencies)
        cmd = ["npm", "install", "--no-audit", "--no-fund", "--loglevel=error"]
        if config.offline:
            cmd.append("--offline")
        cwd = env.app_dir
    else:
        for ref in refs:
            env.java_deps[ref.name] = ref
        _write_env_pom(env)
        cmd = [
            "mvn", "-q", "-B", "dependency:resolve",
            f"-Dmaven.repo.local={env.maven_repo}",
            "-f", str(env.app_dir / "pom.xml"),
        ]
        if config.offline:
            cmd.append("--offline")
        cwd = env.app_dir

    env_vars = _installer_env(env, config)
    attempts = 0
    while True:
        attempts += 1
        code, stdout, stderr, duration = _run_installer(cmd, cwd, env_vars, config.install_timeout)
        report = InstallReport(code == 0, names, " ".join(cmd), code, stdout, stderr, duration, attempts)
        if code == 0:
            env.state = "installed"
            logger.debug("installed %s into %s", names, env.id)
            return report
        combined = stdout + "\n" + stderr
        if _looks_like_network_failure(combined):
            if attempts <= config.install_retries:
                time.sleep(min(2.0 * attempts, 10.0))
                continue
            raise NetworkFailure(f"installer network failure after {attempts} attempts", report)
        raise _classify_install_failure(env.ecosystem, combined, report)


def _js_install_spec(ref: PackageRef, config: HarnessConfig) -> str:
    if config.offline:
        mirror = config.mirror_for("javascript")
        if mirror is not None:
            tarballs = sorted(mirror.glob(f"{ref.name.replace('/', '-').lstrip('@')}-*.tgz"))
            if tarballs:
                return f"file:{tarballs[-1]}"
    return ref.version_spec or "*"


def _looks_like_network_failure(output: str) -> bool:
    return any(marker in output for marker in _NETWORK_ERROR_MARKERS)


def _classify_install_failure(ecosystem: str, output: str, report: InstallReport) -> InstallError:
    if ecosystem == "python":
        if "ResolutionImpossible" in output or "conflicting dependencies" in output.lower():
            return ResolutionConflict("pip reported incompatible constraints", report)
        if "No matching distribution found" in output or "Could not find a version" in output:
            return UnknownPackage("package not found in index", report)
    elif ecosystem == "javascript":
        if "ERESOLVE" in output:
            return ResolutionConflict("npm reported incompatible constraints", report)
        if "E404" in output or "ETARGET" in output or "ENOENT" in output and ".tgz" in output:
            return UnknownPackage("package not found in registry", report)
    else:
        if "Could not find artifact" in output or "was not found" in output:
            return UnknownPackage("artifact not found in repository", report)
        if "DependencyConvergence" in output or "conflict" in output.lower():
            return ResolutionConflict("maven reported a dependency conflict", report)
    return InstallError("installer failed", report)


# --- execution context -------------------------------------------------------


def exec_env(env: EnvHandle, config: HarnessConfig | None = None) -> dict[str, str]:
    """Environment variables a child process needs to see exactly this
    environment's packages (and nothing from the host)."""
    config = config or HarnessConfig()
    env._check_live()
    vars_ = _installer_env(env, config)
    if env.ecosystem == "javascript":
        vars_["NODE_PATH"] = str(env.node_modules)
    elif env.ecosystem == "java":
        vars_["MAVEN_OPTS"] = f"-Dmaven.repo.local={env.maven_repo}"
    return vars_


# --- teardown ----------------------------------------------------------------


def destroy(env: EnvHandle) -> None:
    """Delete the environment root.  Idempotent: destroying twice is a no-op."""
    if env.state == "destroyed":
        return
    if env.active_pid is not None:
        try:
            os.kill(env.active_pid, 0)
        except (ProcessLookupError, PermissionError):
            env.active_pid = None
        else:
            raise CleanupFailed(
                f"environment {env.id} has a live child process (pid {env.active_pid})"
            )
    try:
        shutil.rmtree(env.root)
    except OSError as exc:
        quarantine = env.root.with_name(env.root.name + f".quarantined-{int(time.time())}")
        try:
            env.root.rename(quarantine)
        except OSError:
            quarantine = env.root
        _unregister(env)
        env.state = "destroyed"
        raise CleanupFailed(f"could not remove {env.root}: {exc}; quarantined at {quarantine}") from exc
    _unregister(env)
    env.state = "destroyed"
    logger.debug("destroyed env %s", env.id)
