"""Failure classification: map a failed execution onto the five-way error
taxonomy and pull missing-package names out of error text.

Rule precedence is fixed: NotProcessed, then Dependency, then Environment,
then CodeBug, then the Other catch-all.  A missing import buried inside a
traceback must win over the generic runtime-bug rules, so dependency
patterns are checked first.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass
from importlib import resources

from .executor import ExecutionResult
from .manifest import PackageRef, normalize_js_name, normalize_python_name

logger = logging.getLogger(__name__)


class ErrorCategory(enum.Enum):
    CODE_BUG = "CodeBug"
    NOT_PROCESSED = "NotProcessed"
    OTHER = "Other"
    DEPENDENCY = "Dependency"
    ENVIRONMENT = "Environment"


class UnmappedModule(Exception):
    """A missing-import pattern matched but no package mapping exists."""

    def __init__(self, imported_name: str, ecosystem: str):
        self.imported_name = imported_name
        self.ecosystem = ecosystem
        super().__init__(f"no {ecosystem} package mapping for {imported_name!r}")


@dataclass(frozen=True)
class MissingPackage:
    """A package extracted from a missing-import error message.

    ``verified`` is False when the alias table had no entry and the name was
    mapped to itself; the resolver may still try installing it.
    """

    imported_name: str
    resolved: PackageRef
    pattern_id: str
    verified: bool = True


# --- pattern tables -------------------------------------------------------

# Missing-import patterns, per ecosystem: (pattern_id, regex).
_DEPENDENCY_PATTERNS: dict[str, tuple[tuple[str, re.Pattern[str]], ...]] = {
    "python": (
        ("py-no-module", re.compile(r"No module named '?([A-Za-z0-9_.]+)'?")),
    ),
    "javascript": (
        # Relative specifiers ('./x', '/x') are missing files, not packages.
        ("js-cannot-find", re.compile(r"Cannot find (?:module|package) '([^'./][^']*)'")),
    ),
    "java": (
        ("java-cnfe", re.compile(r"ClassNotFoundException:?\s+([\w.$]+)")),
        ("java-ncdfe", re.compile(r"NoClassDefFoundError:?\s+([\w./$]+)")),
        ("java-pkg-missing", re.compile(r"package ([\w.]+) does not exist")),
    ),
}

_ENVIRONMENT_PATTERNS: tuple[re.Pattern[str], ...] = (
    re.compile(r"requires [Pp]ython (?:'|\")?[><=~!]"),
    re.compile(r"Unsupported engine|EBADENGINE"),
    re.compile(r"UnsupportedClassVersionError"),
    re.compile(r"error while loading shared libraries"),
    re.compile(r"cannot open shared object file"),
    re.compile(r"GLIBC_\d"),
    re.compile(r"Permission denied|PermissionError|EACCES|EPERM\b"),
    re.compile(r"command not found|No such file or directory: '?(?:python|node|java|mvn)"),
)

_CODEBUG_PATTERNS: tuple[re.Pattern[str], ...] = (
    re.compile(r"SyntaxError|IndentationError|TabError"),
    re.compile(r"Traceback \(most recent call last\)"),
    re.compile(r"\b(?:ReferenceError|TypeError|RangeError|AssertionError)\b"),
    re.compile(r"Cannot find (?:module|package) '\.{1,2}/"),  # missing project file
    re.compile(r"^\s+at .+:\d+:\d+\)?$", re.MULTILINE),  # node stack frame
    re.compile(r"Exception in thread"),
    re.compile(r"^\[ERROR\].*\.java:\[\d+", re.MULTILINE),
    re.compile(r"error: (?:cannot find symbol|';' expected|illegal|incompatible types)"),
)


def _decode(stream: bytes | str) -> str:
    if isinstance(stream, bytes):
        return stream.decode("utf-8", errors="replace")
    return stream


def _failure_text(result: ExecutionResult) -> str:
    # stderr first: precedence must not depend on stdout chatter ordering.
    return _decode(result.stderr) + "\n" + _decode(result.stdout)


def classify(result: ExecutionResult, parse_ok: bool, ecosystem: str) -> ErrorCategory:
    """Assign exactly one error category to a failed execution.

    Total over failed results: anything unrecognized lands in Other,
    which also absorbs installer resolution conflicts.
    """
    if not parse_ok:
        return ErrorCategory.NOT_PROCESSED
    text = _failure_text(result)
    for _pattern_id, pattern in _DEPENDENCY_PATTERNS.get(ecosystem, ()):
        if pattern.search(text):
            return ErrorCategory.DEPENDENCY
    for pattern in _ENVIRONMENT_PATTERNS:
        if pattern.search(text):
            return ErrorCategory.ENVIRONMENT
    for pattern in _CODEBUG_PATTERNS:
        if pattern.search(text):
            return ErrorCategory.CODE_BUG
    return ErrorCategory.OTHER


def classify_text(stderr_text: str, ecosystem: str) -> ErrorCategory:
    """Classify raw error text (CLI convenience path)."""
    result = ExecutionResult(
        exit_code=1, stdout=b"", stderr=stderr_text.encode(), duration=0.0,
        timed_out=False, outcome="Failed",
    )
    return classify(result, parse_ok=True, ecosystem=ecosystem)


# --- alias tables ---------------------------------------------------------


def _load_table(filename: str) -> dict[str, str]:
    table: dict[str, str] = {}
    text = resources.files("reproaudit.data").joinpath(filename).read_text("utf-8")
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("\t")
        if key and value:
            table[key.strip()] = value.strip()
    return table


class AliasTables:
    """Import-name to distribution mappings, loaded once from data files."""

    def __init__(self):
        self.python = _load_table("python_aliases.tsv")
        self.javascript = _load_table("javascript_aliases.tsv")
        self.java_prefixes = sorted(
            _load_table("java_prefixes.tsv").items(), key=lambda kv: -len(kv[0])
        )


_tables: AliasTables | None = None


def alias_tables() -> AliasTables:
    global _tables
    if _tables is None:
        _tables = AliasTables()
    return _tables


def extract_missing_package(stderr: bytes | str, ecosystem: str) -> MissingPackage:
    """Extract the missing package from dependency-failure text.

    python: first dotted segment of the module name, then the alias map;
    javascript: bare package name or scoped prefix; java: class name mapped
    through the coordinate prefix table.  Python and javascript fall back to
    identity (flagged unverified); java without a prefix match raises
    :class:`UnmappedModule` since a coordinate cannot be guessed.
    """
    text = _decode(stderr)
    for pattern_id, pattern in _DEPENDENCY_PATTERNS[ecosystem]:
        match = pattern.search(text)
        if not match:
            continue
        captured = match.group(1)
        if ecosystem == "python":
            module = captured.split(".")[0]
            dist = alias_tables().python.get(module)
            if dist is None:
                logger.warning("no alias for python module %r; trying identity", module)
                return MissingPackage(
                    module,
                    PackageRef("python", normalize_python_name(module), scope="runtime"),
                    pattern_id,
                    verified=False,
                )
            return MissingPackage(
                module,
                PackageRef("python", normalize_python_name(dist), scope="runtime"),
                pattern_id,
            )
        if ecosystem == "javascript":
            parts = captured.split("/")
            package = "/".join(parts[:2]) if captured.startswith("@") else parts[0]
            mapped = alias_tables().javascript.get(package)
            verified = mapped is not None
            if not verified:
                logger.warning("no alias for js module %r; trying identity", package)
            return MissingPackage(
                package,
                PackageRef("javascript", normalize_js_name(mapped or package), scope="runtime"),
                pattern_id,
                verified=verified,
            )
        # java: longest class-name prefix decides the coordinate
        class_name = captured.replace("/", ".")
        probe = class_name if class_name.endswith(".") else class_name + "."
        for prefix, coordinate in alias_tables().java_prefixes:
            if probe.startswith(prefix):
                return MissingPackage(
                    class_name,
                    PackageRef("java", coordinate, scope="compile"),
                    pattern_id,
                )
        raise UnmappedModule(class_name, ecosystem)
    raise ValueError(f"no missing-import pattern matched for {ecosystem}")
