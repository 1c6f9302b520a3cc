"""Selects the compiled kernel core, falling back to numpy.

Set ``MRVR_PURE=1`` in the environment to force the fallback.
"""

import os

from . import _pure

if os.environ.get("MRVR_PURE", "") not in ("", "0"):
    kernels = _pure
else:
    try:
        from . import _core as kernels
    except ImportError:
        kernels = _pure

NAME = kernels.NAME


def get(name=None):
    """Return a kernel module by name (``"compiled"``/``"pure"``), or the active one."""
    if name is None:
        return kernels
    if name == "pure":
        return _pure
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")


def available():
    names = ["pure"]
    try:
        from . import _core  # noqa: F401
    except ImportError:
        return names
    return ["compiled"] + names


def use(name):
    """Switch the active backend for subsequent fits (process-wide)."""
    global kernels, NAME
    kernels = get(name)
    NAME = kernels.NAME
    return kernels
