"""Manifest parsing: turn the three ecosystem manifest formats into a
normalized claimed-dependency set.

Supported manifests: requirements.txt (python), package.json (javascript),
pom.xml (java).  Parsing is deterministic and set-valued: duplicate
declarations of one package collapse, and version constraints never affect
set membership.
"""

from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

ECOSYSTEMS = ("python", "javascript", "java")

#: Detection priority: first manifest found wins.
MANIFEST_PRIORITY: tuple[tuple[str, str], ...] = (
    ("requirements.txt", "python"),
    ("package.json", "javascript"),
    ("pom.xml", "java"),
)

SCOPES = ("runtime", "dev", "test", "provided", "compile")


class ManifestError(Exception):
    """Base class for manifest-layer failures."""


class NoManifestFound(ManifestError):
    pass


class UnsupportedRequirement(ManifestError):
    """A requirements.txt line outside the supported grammar.

    Aborts the parse: silently dropping lines would shrink the claimed set
    and inflate downstream gap and multiplier numbers.
    """

    def __init__(self, line_no: int, line: str, reason: str):
        self.line_no = line_no
        self.line = line
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}: {line!r}")


class MalformedManifest(ManifestError):
    pass


def normalize_python_name(name: str) -> str:
    # Fold case and underscore/hyphen/dot runs so Flask, flask and
    # flask_login/flask-login compare equal.
    return re.sub(r"[-_.]+", "-", name.strip().lower())


def normalize_js_name(name: str) -> str:
    # npm names are case-insensitive by registry rule; underscores are
    # significant and must be kept.
    return name.strip().lower()


@dataclass(frozen=True)
class PackageRef:
    """One package reference; identity is (ecosystem, name) only.

    ``version_spec`` and ``scope`` ride along verbatim but are excluded from
    equality and hashing so sets of refs count unique names.
    """

    ecosystem: str
    name: str
    version_spec: str | None = field(default=None, compare=False)
    scope: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.ecosystem not in ECOSYSTEMS:
            raise ValueError(f"unknown ecosystem: {self.ecosystem!r}")
        if not self.name:
            raise ValueError("package name must be non-empty")
        if self.ecosystem == "java":
            if self.name.count(":") != 1:
                raise ValueError(
                    f"java package name must be group:artifact, got {self.name!r}"
                )
        elif self.name != self.name.lower():
            raise ValueError(f"{self.ecosystem} name must be lowercase: {self.name!r}")
        if self.scope is not None and self.scope not in SCOPES:
            raise ValueError(f"unknown scope: {self.scope!r}")

    def spec_string(self) -> str:
        """Installer argument form, e.g. ``flask==2.0.1``."""
        return f"{self.name}{self.version_spec or ''}"


@dataclass(frozen=True)
class ClaimedDeps:
    """The claimed layer: packages the project's manifest declares."""

    packages: frozenset[PackageRef]
    manifest_path: Path
    ecosystem: str
    ignored_count: int = 0  # pom entries under dependencyManagement/profiles

    def __post_init__(self):
        for ref in self.packages:
            if ref.ecosystem != self.ecosystem:
                raise ValueError(
                    f"mixed ecosystems in claimed set: {ref.ecosystem} vs {self.ecosystem}"
                )

    def names(self) -> list[str]:
        return sorted(ref.name for ref in self.packages)

    def __len__(self) -> int:
        return len(self.packages)


@dataclass
class ProjectUnderTest:
    """One project to audit: code root plus provenance labels."""

    root: Path
    ecosystem: str
    manifest_path: Path
    entry: str | None = None
    agent: str = "unknown"
    prompt_id: str = ""

    def __post_init__(self):
        if not self.prompt_id:
            self.prompt_id = self.root.name


def detect_manifest(project_root: Path) -> tuple[str, Path]:
    """Pick the project's manifest in fixed priority order.

    Multiple manifests are not an error; the priority order breaks the tie
    and the decision is logged.
    """
    project_root = Path(project_root)
    if not project_root.is_dir():
        raise NoManifestFound(f"not a readable directory: {project_root}")
    found = [
        (name, eco)
        for name, eco in MANIFEST_PRIORITY
        if (project_root / name).is_file()
    ]
    if not found:
        raise NoManifestFound(f"no recognized manifest in {project_root}")
    if len(found) > 1:
        logger.info(
            "multiple manifests in %s (%s); priority order selects %s",
            project_root,
            ", ".join(name for name, _ in found),
            found[0][0],
        )
    name, ecosystem = found[0]
    return ecosystem, project_root / name


# requirements.txt line: name, optionally a single comparison constraint.
_REQ_LINE = re.compile(
    r"""^(?P<name>[A-Za-z0-9](?:[A-Za-z0-9._-]*[A-Za-z0-9])?)
        \s*
        (?P<spec>(?:===|==|~=|!=|<=|>=|<|>)\s*[A-Za-z0-9.*+!_-]+)?
        \s*$""",
    re.VERBOSE,
)

_REQ_UNSUPPORTED_PREFIXES = ("-e", "--editable", "-r", "--requirement", "-c", "--constraint")


def parse_requirements(text: bytes, manifest_path: Path | str = "requirements.txt") -> ClaimedDeps:
    """Parse a requirements.txt byte string into the claimed set.

    Grammar per line: ``name`` with an optional version constraint
    (``==``, ``>=``, ``<=``, ``~=`` and friends), trailing ``#`` comments
    stripped.  Editable installs, URL/path requirements and include
    directives abort the parse with :class:`UnsupportedRequirement`.
    """
    try:
        decoded = text.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedManifest(f"requirements.txt is not UTF-8: {exc}") from exc

    packages: set[PackageRef] = set()
    for line_no, raw in enumerate(decoded.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lowered = line.lower()
        if any(lowered == p or lowered.startswith(p + " ") or lowered.startswith(p + "=")
               for p in _REQ_UNSUPPORTED_PREFIXES):
            raise UnsupportedRequirement(line_no, raw, "install option")
        if "://" in line or line.startswith((".", "/", "~")):
            raise UnsupportedRequirement(line_no, raw, "URL or path requirement")
        match = _REQ_LINE.match(line)
        if not match:
            raise UnsupportedRequirement(line_no, raw, "unrecognized requirement syntax")
        spec = match.group("spec")
        packages.add(
            PackageRef(
                ecosystem="python",
                name=normalize_python_name(match.group("name")),
                version_spec=re.sub(r"\s+", "", spec) if spec else None,
                scope="runtime",
            )
        )
    return ClaimedDeps(frozenset(packages), Path(manifest_path), "python")


def parse_package_json(text: bytes, manifest_path: Path | str = "package.json") -> ClaimedDeps:
    """Parse package.json: union of dependencies and devDependencies.

    devDependencies are kept, tagged scope=dev, so downstream metrics can
    filter by scope instead of losing the information here.
    """
    try:
        doc = json.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedManifest(f"invalid package.json: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedManifest("package.json root must be a JSON object")

    packages: set[PackageRef] = set()
    for key, scope in (("dependencies", "runtime"), ("devDependencies", "dev")):
        section = doc.get(key)
        if section is None:
            continue
        if not isinstance(section, dict):
            raise MalformedManifest(f"package.json field {key!r} must be an object")
        for name, spec in section.items():
            if not isinstance(name, str) or not name.strip():
                raise MalformedManifest(f"empty package name under {key!r}")
            if not isinstance(spec, str):
                raise MalformedManifest(f"version of {name!r} must be a string")
            ref = PackageRef(
                ecosystem="javascript",
                name=normalize_js_name(name),
                version_spec=spec,
                scope=scope,
            )
            if ref not in packages:  # dependencies wins over devDependencies
                packages.add(ref)
    return ClaimedDeps(frozenset(packages), Path(manifest_path), "javascript")


def _local_name(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _child_text(elem: ET.Element, name: str) -> str | None:
    for child in elem:
        if _local_name(child.tag) == name:
            return (child.text or "").strip() or None
    return None


def parse_pom(text: bytes, manifest_path: Path | str = "pom.xml") -> ClaimedDeps:
    """Parse pom.xml: one ref per ``<dependency>`` under the top-level
    ``<dependencies>``.

    Entries inside ``<dependencyManagement>`` or ``<profiles>`` are skipped
    and counted in ``ignored_count``.  XML namespaces are tolerated.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedManifest(f"invalid pom.xml: {exc}") from exc
    if _local_name(root.tag) != "project":
        raise MalformedManifest(f"pom root element must be <project>, got <{_local_name(root.tag)}>")

    ignored = 0
    for section in root.iter():
        if _local_name(section.tag) in ("dependencyManagement", "profiles"):
            ignored += sum(1 for e in section.iter() if _local_name(e.tag) == "dependency")

    packages: set[PackageRef] = set()
    for child in root:
        if _local_name(child.tag) != "dependencies":
            continue
        for dep in child:
            if _local_name(dep.tag) != "dependency":
                continue
            group = _child_text(dep, "groupId")
            artifact = _child_text(dep, "artifactId")
            if not group or not artifact:
                raise MalformedManifest("dependency missing groupId or artifactId")
            scope = _child_text(dep, "scope") or "compile"
            if scope not in SCOPES:
                raise MalformedManifest(f"unsupported dependency scope {scope!r}")
            packages.add(
                PackageRef(
                    ecosystem="java",
                    name=f"{group}:{artifact}",
                    version_spec=_child_text(dep, "version"),
                    scope=scope,
                )
            )
    if ignored:
        logger.info("%s: ignored %d managed/profile dependencies", manifest_path, ignored)
    return ClaimedDeps(frozenset(packages), Path(manifest_path), "java", ignored_count=ignored)


_PARSERS = {
    "python": parse_requirements,
    "javascript": parse_package_json,
    "java": parse_pom,
}


def parse_manifest(ecosystem: str, text: bytes, manifest_path: Path | str) -> ClaimedDeps:
    """Dispatch to the ecosystem's parser."""
    try:
        parser = _PARSERS[ecosystem]
    except KeyError:
        raise ValueError(f"no parser for ecosystem {ecosystem!r}") from None
    return parser(text, manifest_path)
