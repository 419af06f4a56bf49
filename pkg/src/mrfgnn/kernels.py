"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy
fallback. Set ``MRFGNN_PURE_PYTHON=1`` to force the fallback.
"""

import importlib
import os
from types import ModuleType

_FORCE_PURE = os.environ.get("MRFGNN_PURE_PYTHON", "") not in ("", "0")


def load(name: str) -> ModuleType:
    """Return a kernel module by backend name (``"compiled"`` or ``"python"``)."""
    if name == "compiled":
        return importlib.import_module("mrfgnn._kernels")
    if name == "python":
        return importlib.import_module("mrfgnn._kernels_py")
    raise ValueError(f"unknown kernel backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        load("compiled")
    except ImportError:
        pass
    else:
        names.insert(0, "compiled")
    return names


if _FORCE_PURE:
    BACKEND = "python"
else:
    BACKEND = available()[0]

impl = load(BACKEND)
