"""Kernel backend selection.

The compiled extension is preferred when importable; PROGRESSRL_BACKEND
forces a choice ("c" or "py"). Both backends are bit-identical, so the
selection never changes results, only speed.

PROGRESSRL_THREADS is accepted and validated for operational compatibility,
but kernels always reduce in a fixed order and run on a single worker at
these problem sizes, so the value never affects results.
"""

import os

from .errors import ConfigError


def _load(choice: str):
    if choice == "c":
        from . import _speedups

        return _speedups, "c"
    from . import _purekernels

    return _purekernels, "py"


_requested = os.environ.get("PROGRESSRL_BACKEND", "auto").strip().lower()
if _requested in ("", "auto"):
    try:
        K, BACKEND = _load("c")
    except ImportError:
        K, BACKEND = _load("py")
elif _requested == "c":
    K, BACKEND = _load("c")
elif _requested in ("py", "python", "pure"):
    K, BACKEND = _load("py")
else:
    raise ConfigError(f"PROGRESSRL_BACKEND must be 'auto', 'c' or 'py', got {_requested!r}")


def _parse_threads(raw: str | None) -> int:
    if raw is None or raw.strip() == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PROGRESSRL_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"PROGRESSRL_THREADS must be >= 1, got {n}")
    return n


THREADS = _parse_threads(os.environ.get("PROGRESSRL_THREADS"))
