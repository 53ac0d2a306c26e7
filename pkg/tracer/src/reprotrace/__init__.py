"""Import tracer for audited Python executions.

The deliverable is a hook directory containing ``sitecustomize.py``.  An
orchestrator preloads it by prepending the directory to ``PYTHONPATH`` and
pointing ``REPRO_TRACE_OUT`` at a writable file; the interpreter's site
machinery imports the shim before user code runs, and at exit the shim
flushes every successfully loaded top-level module name to that file.

Side-channel format: line 1 is ``TRACE-OK <interpreter version>`` (or
``TRACE-FAILED <reason>``), followed by one sorted module name per line.
"""

from __future__ import annotations

from pathlib import Path

__version__ = "0.1.0"

TRACE_OUT_ENV_VAR = "REPRO_TRACE_OUT"


def hook_dir() -> Path:
    """Directory to prepend to PYTHONPATH for tracing."""
    return Path(__file__).resolve().parent / "hook"


def read_trace(path: Path) -> tuple[str, list[str]]:
    """Parse a side-channel file into (interpreter version, module names).

    Raises ValueError on a missing file, an empty file, or a failure
    sentinel.
    """
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"no trace file at {path}")
    lines = path.read_text("utf-8").splitlines()
    if not lines:
        raise ValueError("trace file is empty")
    header = lines[0]
    if not header.startswith("TRACE-OK"):
        raise ValueError(f"trace did not succeed: {header}")
    return header[len("TRACE-OK"):].strip(), [l for l in lines[1:] if l]
