from __future__ import annotations

import base64
import csv
import hashlib
import io
import zipfile
from pathlib import Path

import pytest

from reprotrace import hook_dir


@pytest.fixture(scope="session")
def shim_dir() -> Path:
    path = hook_dir()
    assert (path / "sitecustomize.py").is_file()
    return path


def make_wheel(dest_dir: Path, name: str, version: str, module_body: str = "VALUE = 1\n") -> Path:
    """Minimal pure-python wheel for offline installs in tests."""
    module = name.replace("-", "_")
    wheel_path = Path(dest_dir) / f"{module}-{version}-py3-none-any.whl"
    dist_info = f"{module}-{version}.dist-info"
    files = {
        f"{module}/__init__.py": module_body,
        f"{dist_info}/METADATA": f"Metadata-Version: 2.1\nName: {name}\nVersion: {version}\n",
        f"{dist_info}/WHEEL": (
            "Wheel-Version: 1.0\nGenerator: fixture\nRoot-Is-Purelib: true\nTag: py3-none-any\n"
        ),
    }
    rows = []
    with zipfile.ZipFile(wheel_path, "w") as archive:
        for arcname, text in files.items():
            data = text.encode()
            archive.writestr(arcname, data)
            digest = base64.urlsafe_b64encode(hashlib.sha256(data).digest()).rstrip(b"=").decode()
            rows.append((arcname, f"sha256={digest}", str(len(data))))
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerows(rows)
        writer.writerow((f"{dist_info}/RECORD", "", ""))
        archive.writestr(f"{dist_info}/RECORD", buffer.getvalue())
    return wheel_path
