"""Interpreter startup shim: record every successfully imported top-level
module and flush the sorted list to a side-channel file at exit.

Imported automatically by the site machinery when this directory is on the
module search path.  Inert unless REPRO_TRACE_OUT names the output file.
The traced program's stdout, stderr and exit code are never touched; the
only observable effect is the side-channel file.

Names are recorded at import completion (a failed import is never listed),
via two complementary sources merged at exit: a wrapper around the builtin
import hook, and the final contents of sys.modules (which also covers
importlib-driven loads and everything the interpreter loaded at startup).
"""

import atexit
import builtins
import os
import sys
import threading

_ENV_VAR = "REPRO_TRACE_OUT"
_SELF_NAMES = frozenset({"sitecustomize", "usercustomize", "__main__", "__mp_main__"})

_recorded = set()
_flush_lock = threading.Lock()
_flushed = False


def _top_level(name):
    return name.partition(".")[0]


def _write_lines(path, lines):
    # plain file write, no stdout/stderr involvement
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def _write_failure(path, reason):
    try:
        _write_lines(path, ["TRACE-FAILED " + reason.replace("\n", " ")])
    except OSError:
        pass  # nothing more the shim can do without touching the program


def _flush(path):
    global _flushed
    with _flush_lock:
        if _flushed:
            return
        _flushed = True
    names = set(_recorded)
    names.update(_top_level(name) for name in list(sys.modules))
    names.difference_update(_SELF_NAMES)
    names.discard("")
    try:
        version = "%d.%d.%d" % sys.version_info[:3]
        _write_lines(path, ["TRACE-OK " + version] + sorted(names))
    except OSError:
        _write_failure(path, "could not write side-channel file")


def _install(path):
    real_import = builtins.__import__

    def tracing_import(name, globals=None, locals=None, fromlist=(), level=0):
        module = real_import(name, globals, locals, fromlist, level)
        # record only after the import machinery returned successfully
        if level == 0 and isinstance(name, str) and name:
            _recorded.add(_top_level(name))
        return module

    builtins.__import__ = tracing_import
    atexit.register(_flush, path)


def _activate():
    path = os.environ.get(_ENV_VAR)
    if not path:
        return
    try:
        _install(path)
    except Exception as exc:  # hook could not register: leave a sentinel
        _write_failure(path, "%s: %s" % (type(exc).__name__, exc))


_activate()
