"""Runtime dependency capture and transitive closure.

The runtime layer is captured per ecosystem after resolution succeeds:
python re-executes under an import-tracing shim and maps loaded module
names to installed distributions; javascript flattens the package manager's
full dependency tree; java flattens the build tool's dependency tree.
Closures over offline registry snapshots back the oracle tests and the
closure CLI.

The javascript layer is an install-time measure while python's is a
load-time trace; reports carry that asymmetry explicitly.
"""

from __future__ import annotations

import json
import logging
import re
import subprocess
import tempfile
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from . import envmgr, executor
from .config import TRACE_OUT_ENV_VAR, HarnessConfig
from .manifest import ClaimedDeps, PackageRef, ProjectUnderTest, normalize_python_name

logger = logging.getLogger(__name__)

CAPTURE_METHODS = ("import_trace", "npm_tree", "mvn_tree", "closure_computed")


class ClosureError(Exception):
    pass


class TraceFailed(ClosureError):
    pass


class TreeCommandFailed(ClosureError):
    pass


class TreeParseFailed(ClosureError):
    def __init__(self, line_no: int, line: str):
        self.line_no = line_no
        self.line = line
        super().__init__(f"malformed tree line {line_no}: {line!r}")


class UnknownRoot(ClosureError):
    pass


@dataclass(frozen=True)
class RuntimeDeps:
    """The runtime layer: everything actually loaded or resolved, with the
    versions that were installed."""

    packages: frozenset[PackageRef]
    capture_method: str
    unmapped: tuple[str, ...] = ()

    def __post_init__(self):
        if self.capture_method not in CAPTURE_METHODS:
            raise ValueError(f"unknown capture method {self.capture_method!r}")
        names = [ref.name for ref in self.packages]
        if len(names) != len(set(names)):
            raise ValueError("duplicate package names in runtime set")

    def names(self) -> list[str]:
        return sorted(ref.name for ref in self.packages)


# --- python: import trace ----------------------------------------------------

# top_level.txt when present, else the installed file roots: wheels built
# without setuptools (and synthetic fixtures) carry no top_level.txt
_PKG_DIST_SNIPPET = """\
import collections, json
from importlib.metadata import distributions
mapping = collections.defaultdict(set)
for dist in distributions():
    name = dist.metadata["Name"]
    if not name:
        continue
    tops = set((dist.read_text("top_level.txt") or "").split())
    if not tops:
        for f in dist.files or []:
            root = f.parts[0]
            if root.endswith((".dist-info", ".egg-info", ".data")) or root == "..":
                continue
            if root.endswith(".py"):
                tops.add(root[:-3])
            elif "." not in root:
                tops.add(root)
    for top in tops:
        if top:
            mapping[top].add(name)
print(json.dumps({k: sorted(v) for k, v in mapping.items()}))
"""


def _stdlib_modules(env: envmgr.EnvHandle) -> set[str]:
    proc = subprocess.run(
        [str(env.python), "-I", "-c", "import sys; print('\\n'.join(sys.stdlib_module_names))"],
        capture_output=True, text=True, timeout=60,
    )
    if proc.returncode != 0:
        raise TraceFailed(f"stdlib listing failed: {proc.stderr}")
    return {line.strip() for line in proc.stdout.splitlines() if line.strip()}


def _module_to_dist(env: envmgr.EnvHandle) -> dict[str, list[str]]:
    proc = subprocess.run(
        [str(env.python), "-I", "-c", _PKG_DIST_SNIPPET],
        capture_output=True, text=True, timeout=60,
    )
    if proc.returncode != 0:
        raise TraceFailed(f"module-to-distribution mapping failed: {proc.stderr}")
    return json.loads(proc.stdout)


def _is_project_local(name: str, root: Path) -> bool:
    return (root / f"{name}.py").exists() or (root / name / "__init__.py").exists()


def read_trace_file(path: Path) -> tuple[str, list[str]]:
    """Parse a tracer side-channel file into (interpreter version, names).

    Raises :class:`TraceFailed` on a missing file or a failure sentinel.
    """
    if not path.is_file():
        raise TraceFailed("tracer produced no side-channel file")
    lines = path.read_text("utf-8").splitlines()
    if not lines:
        raise TraceFailed("tracer side-channel file is empty")
    header = lines[0].strip()
    if header.startswith("TRACE-FAILED"):
        raise TraceFailed(header)
    if not header.startswith("TRACE-OK"):
        raise TraceFailed(f"unrecognized trace header: {header!r}")
    version = header[len("TRACE-OK"):].strip()
    return version, [line.strip() for line in lines[1:] if line.strip()]


def capture_runtime_python(
    env: envmgr.EnvHandle,
    project: ProjectUnderTest,
    entry: str,
    config: HarnessConfig | None = None,
    baseline: envmgr.BaselineSnapshot | None = None,
) -> RuntimeDeps:
    """Re-run the entry under the import tracer and map loaded modules to
    installed distributions.

    Degrades to the flagged ``closure_computed`` fallback (the environment's
    post-install inventory minus the baseline) whenever the tracer is absent
    or produced no usable output.
    """
    config = config or HarnessConfig()
    try:
        if config.tracer_dir is None or not (config.tracer_dir / "sitecustomize.py").is_file():
            raise TraceFailed("tracer hook directory not configured or missing sitecustomize.py")
        with tempfile.TemporaryDirectory(dir=env.tmp_dir) as scratch:
            side_channel = Path(scratch) / "trace.txt"
            executor.run(
                env, project, entry, config.execution_timeout, config,
                extra_env={
                    TRACE_OUT_ENV_VAR: str(side_channel),
                    "PYTHONPATH": str(config.tracer_dir),
                },
            )
            _version, traced = read_trace_file(side_channel)
    except TraceFailed as exc:
        logger.warning("python runtime trace unavailable (%s); using inventory fallback", exc)
        return _runtime_from_inventory(env, baseline)

    stdlib = _stdlib_modules(env)
    mapping = _module_to_dist(env)
    inventory = dict(snapshot_versions(env))
    packages: dict[str, PackageRef] = {}
    unmapped: list[str] = []
    for name in traced:
        if name in stdlib or name in ("sitecustomize", "usercustomize", "__main__"):
            continue
        if _is_project_local(name, project.root):
            continue
        dists = mapping.get(name)
        if not dists:
            unmapped.append(name)
            continue
        dist = normalize_python_name(dists[0])
        packages[dist] = PackageRef(
            "python", dist, version_spec=_installed_spec(inventory.get(dist)), scope="runtime"
        )
    return RuntimeDeps(frozenset(packages.values()), "import_trace", tuple(sorted(set(unmapped))))


def snapshot_versions(env: envmgr.EnvHandle) -> list[tuple[str, str]]:
    snap = envmgr.snapshot_inventory(env)
    if env.ecosystem == "python":
        return [(normalize_python_name(name), version) for name, version in snap.entries]
    return list(snap.entries)


def _installed_spec(version: str | None) -> str | None:
    return f"=={version}" if version else None


def _runtime_from_inventory(
    env: envmgr.EnvHandle, baseline: envmgr.BaselineSnapshot | None
) -> RuntimeDeps:
    baseline_names = {name for name, _ in baseline.entries} if baseline else set()
    if env.ecosystem == "python":
        baseline_names = {normalize_python_name(n) for n in baseline_names}
    packages = {
        name: PackageRef(env.ecosystem, name, version_spec=_installed_spec(version))
        for name, version in snapshot_versions(env)
        if name not in baseline_names
    }
    return RuntimeDeps(frozenset(packages.values()), "closure_computed")


# --- javascript: npm tree ----------------------------------------------------


def capture_runtime_js(
    env: envmgr.EnvHandle,
    project: ProjectUnderTest | None = None,
    config: HarnessConfig | None = None,
) -> RuntimeDeps:
    """Flatten the package manager's full dependency tree."""
    config = config or HarnessConfig()
    proc = subprocess.run(
        ["npm", "ls", "--all", "--json"],
        cwd=env.app_dir,
        env=envmgr.exec_env(env, config),
        capture_output=True, text=True, timeout=120,
    )
    if proc.returncode != 0 and not proc.stdout.strip():
        raise TreeCommandFailed(f"npm ls exited {proc.returncode}: {proc.stderr}")
    try:
        doc = json.loads(proc.stdout)
    except json.JSONDecodeError as exc:
        raise TreeCommandFailed(f"npm ls output is not JSON: {exc}") from exc
    flattened = flatten_npm_tree(doc)
    packages = frozenset(
        PackageRef("javascript", name, version_spec=_installed_spec(version))
        for name, version in flattened.items()
    )
    return RuntimeDeps(packages, "npm_tree")


def flatten_npm_tree(doc: dict) -> dict[str, str]:
    """Unique (name -> version) over the whole tree, shallowest entry wins."""
    seen: dict[str, str] = {}
    queue: deque[dict] = deque([doc])
    while queue:
        node = queue.popleft()
        deps = node.get("dependencies")
        if not isinstance(deps, dict):
            continue
        for name, child in sorted(deps.items()):
            if not isinstance(child, dict):
                continue
            key = name.lower()
            if key not in seen:
                seen[key] = str(child.get("version", "unknown"))
            queue.append(child)
    return seen


# --- java: maven tree ----------------------------------------------------------

_MVN_NODE = re.compile(r"^(?P<indent>(?:[| ]{3})*)(?:[+\\]- )(?P<coord>.+)$")
_MVN_COORD = re.compile(r"^[\w.-]+:[\w.-]+:[\w.-]+(:[\w.-]+){1,3}$")


def capture_runtime_java(
    env: envmgr.EnvHandle,
    project: ProjectUnderTest | None = None,
    config: HarnessConfig | None = None,
) -> RuntimeDeps:
    """Flatten the build tool's dependency tree."""
    config = config or HarnessConfig()
    proc = subprocess.run(
        [
            "mvn", "-B", "dependency:tree",
            f"-Dmaven.repo.local={env.maven_repo}",
            "-f", str(env.app_dir / "pom.xml"),
        ],
        env=envmgr.exec_env(env, config),
        capture_output=True, text=True, timeout=600,
    )
    if proc.returncode != 0:
        raise TreeCommandFailed(f"mvn dependency:tree exited {proc.returncode}: {proc.stderr}")
    nodes = parse_mvn_tree(proc.stdout)
    packages: dict[str, PackageRef] = {}
    for depth, coordinate in nodes:
        if depth == 0:
            continue  # the env's own aggregator artifact
        group, artifact, version, scope = coordinate
        name = f"{group}:{artifact}"
        if name not in packages:
            packages[name] = PackageRef(
                "java", name, version_spec=_installed_spec(version),
                scope=scope if scope in ("runtime", "test", "provided", "compile") else None,
            )
    return RuntimeDeps(frozenset(packages.values()), "mvn_tree")


def parse_mvn_tree(text: str) -> list[tuple[int, tuple[str, str, str, str | None]]]:
    """Parse the indented text tree into (depth, (group, artifact, version,
    scope)) nodes.

    Grammar: ``[INFO] `` prefix, ``+-``/``\\-`` branch markers with ``|``
    continuation columns, ``group:artifact:packaging[:classifier]:version[:scope]``
    coordinates.  A malformed line inside the tree region raises
    :class:`TreeParseFailed` with its line number.
    """
    nodes: list[tuple[int, tuple[str, str, str, str | None]]] = []
    in_tree = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.startswith("[INFO]"):
            if in_tree and raw.strip():
                break
            continue
        payload = raw[len("[INFO]"):].lstrip(" ")
        if not in_tree:
            if _MVN_COORD.match(payload.strip()) and ":" in payload:
                in_tree = True
                nodes.append((0, _split_coordinate(payload.strip(), line_no, raw)))
            continue
        if not payload.strip():
            break
        match = _MVN_NODE.match(payload)
        if match is None:
            if _MVN_COORD.match(payload.strip()):
                nodes.append((0, _split_coordinate(payload.strip(), line_no, raw)))
                continue
            break  # end of tree block (BUILD SUCCESS etc.)
        depth = len(match.group("indent")) // 3 + 1
        nodes.append((depth, _split_coordinate(match.group("coord").strip(), line_no, raw)))
    if not nodes:
        raise TreeParseFailed(0, "no dependency tree found in output")
    return nodes


def _split_coordinate(coord: str, line_no: int, raw: str) -> tuple[str, str, str, str | None]:
    parts = coord.split(":")
    if len(parts) == 4:  # group:artifact:packaging:version
        return parts[0], parts[1], parts[3], None
    if len(parts) == 5:  # group:artifact:packaging:version:scope
        return parts[0], parts[1], parts[3], parts[4]
    if len(parts) == 6:  # group:artifact:packaging:classifier:version:scope
        return parts[0], parts[1], parts[4], parts[5]
    raise TreeParseFailed(line_no, raw)


# --- registry closures ---------------------------------------------------------


@dataclass(frozen=True)
class RegistryIndex:
    """Offline package -> direct-dependency edges for closure computation."""

    edges: dict[str, tuple[str, ...]]
    ecosystem: str = "python"

    def known(self) -> set[str]:
        names = set(self.edges)
        for targets in self.edges.values():
            names.update(targets)
        return names


def load_registry(path: Path, ecosystem: str = "python") -> RegistryIndex:
    """Read a registry snapshot: one ``name<TAB>dep1,dep2,...`` line per
    package (empty dependency list allowed)."""
    edges: dict[str, tuple[str, ...]] = {}
    for raw in Path(path).read_text("utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, _, deps = line.partition("\t")
        targets = tuple(d.strip() for d in deps.split(",") if d.strip()) if deps else ()
        edges[name.strip()] = targets
    return RegistryIndex(edges, ecosystem)


def transitive_closure(registry: RegistryIndex, roots) -> set[str]:
    """Breadth-first reachability from the roots, roots included; cycle-safe."""
    known = registry.known()
    roots = set(roots)
    missing = roots - known
    if missing:
        raise UnknownRoot(f"roots not in registry: {sorted(missing)}")
    seen: set[str] = set()
    queue = deque(sorted(roots))
    while queue:
        name = queue.popleft()
        if name in seen:
            continue
        seen.add(name)
        for target in registry.edges.get(name, ()):
            if target not in seen:
                queue.append(target)
    return seen


def runtime_multiplier(claimed: ClaimedDeps | int, runtime: RuntimeDeps | int) -> float | None:
    """|runtime| / |claimed|; None (undefined) when nothing was claimed."""
    claimed_count = claimed if isinstance(claimed, int) else len(claimed.packages)
    runtime_count = runtime if isinstance(runtime, int) else len(runtime.packages)
    if claimed_count == 0:
        return None
    return runtime_count / claimed_count


def check_layer_nesting(
    claimed: ClaimedDeps, working, runtime: RuntimeDeps | None
) -> list[str]:
    """Layer-nesting anomalies: claimed ⊆ working ⊆ runtime ∪ unmapped.

    Returns human-readable anomaly strings; callers log them rather than
    dropping packages.
    """
    anomalies = []
    claimed_names = {ref.name for ref in claimed.packages}
    working_names = {ref.name for ref in working.packages}
    for name in sorted(claimed_names - working_names):
        anomalies.append(f"claimed package {name} missing from working set")
    if runtime is not None:
        covered = {ref.name for ref in runtime.packages} | set(runtime.unmapped)
        for name in sorted(working_names - covered):
            anomalies.append(f"working package {name} not observed in runtime capture")
    return anomalies
