"""Registry of study functions addressable by name.

The process backend and the command line identify study functions by name;
registered names travel over the worker protocol.  Unregistered module-level
functions can also be addressed as ``"module:qualname"``.
"""

from __future__ import annotations

import importlib
import sys

_STUDIES: dict[str, object] = {}


def register_study(name: str):
    """Decorator: register a study function under ``name``."""

    def deco(fn):
        _STUDIES[name] = fn
        fn.study_name = name
        return fn

    return deco


def get_study(name: str):
    """Look up a study function by registered name or ``module:attr`` path."""
    try:
        return _STUDIES[name]
    except KeyError:
        pass
    if ":" in name:
        mod_name, _, attr = name.partition(":")
        mod = importlib.import_module(mod_name)
        fn = mod
        for part in attr.split("."):
            fn = getattr(fn, part)
        if not callable(fn):
            raise ValueError(f"{name!r} is not callable")
        return fn
    known = ", ".join(sorted(_STUDIES)) or "(none)"
    raise ValueError(f"unknown study {name!r}; registered: {known}")


def study_name(fn) -> str | None:
    """Transportable name of a study function, or None if it has none.

    Prefers the importable ``module:qualname`` address, which a freshly
    spawned worker can resolve without sharing this process's registry;
    functions living in ``__main__`` cannot travel that way and fall back to
    their registered name (resolvable only where registration re-runs).
    """
    mod = getattr(fn, "__module__", None)
    qual = getattr(fn, "__qualname__", None)
    if mod and mod != "__main__" and qual and "<" not in qual:
        obj = sys.modules.get(mod)
        for part in qual.split("."):
            obj = getattr(obj, part, None)
            if obj is None:
                break
        if obj is fn:
            return f"{mod}:{qual}"
    return getattr(fn, "study_name", None)
