"""Harness configuration shared by all audit stages."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

HOME_ENV_VAR = "REPRO_AUDIT_HOME"
TRACER_DIR_ENV_VAR = "REPRO_TRACER_DIR"
TRACE_OUT_ENV_VAR = "REPRO_TRACE_OUT"

#: Base PATH given to audited processes; env-specific bin dirs are prepended.
DEFAULT_BASE_PATH = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin"


def default_home() -> Path:
    raw = os.environ.get(HOME_ENV_VAR)
    if raw:
        return Path(raw)
    return Path.cwd() / "repro_audit"


def default_tracer_dir() -> Path | None:
    raw = os.environ.get(TRACER_DIR_ENV_VAR)
    if raw:
        return Path(raw)
    return None


@dataclass
class HarnessConfig:
    """Knobs of the audit protocol, all explicit so runs are replayable.

    ``home`` holds the results store, blob directory, and scratch
    environments.  ``offline`` switches installers to local mirror
    directories only (hermetic CI); ``mirrors`` maps ecosystem name to the
    mirror directory used in that mode.
    """

    home: Path = field(default_factory=default_home)
    execution_timeout: float = 120.0
    install_timeout: float = 600.0
    install_retries: int = 2
    max_iterations: int = 10
    stream_cap: int = 1024 * 1024
    server_probe_after: float = 30.0
    server_probe_window: float = 3.0
    offline: bool = False
    mirrors: dict[str, Path] = field(default_factory=dict)
    keep_env: bool = False
    jobs: int = 1
    env_allowlist: tuple[str, ...] = ("LANG", "LC_ALL", "TERM")
    base_path: str = DEFAULT_BASE_PATH
    tracer_dir: Path | None = field(default_factory=default_tracer_dir)

    @property
    def envs_root(self) -> Path:
        return self.home / "envs"

    @property
    def store_path(self) -> Path:
        return self.home / "audits.jsonl"

    @property
    def blob_dir(self) -> Path:
        return self.home / "blobs"

    def mirror_for(self, ecosystem: str) -> Path | None:
        return self.mirrors.get(ecosystem)
