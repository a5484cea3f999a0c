"""Canonical text encoding.

Equal values must produce equal bytes, so every document goes through
:func:`plain` (numpy scalars, tuples, sets and enums collapsed to JSON
primitives) and is dumped with sorted keys and no insignificant whitespace.
Floats use the shortest repr that round-trips, which keeps
``restore(snapshot(s))`` exact.
"""

from __future__ import annotations

import json
import math
from enum import Enum
from typing import Any

import numpy as np


def _float(x: float) -> float:
    if not math.isfinite(x):
        raise ValueError(f"non-finite float {x!r} cannot be serialized")
    return 0.0 if x == 0.0 else x


def plain(obj: Any) -> Any:
    # exact builtin types first; this walk dominates snapshot cost
    t = type(obj)
    if t is str or t is int or t is bool or obj is None:
        return obj
    if t is float:
        return _float(obj)
    if t is dict:
        return {(k if type(k) is str else str(k.value if isinstance(k, Enum) else k)): plain(v)
                for k, v in obj.items()}
    if t is list or t is tuple:
        return [plain(v) for v in obj]
    if isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if hasattr(obj, "to_dict"):
        return plain(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k.value if isinstance(k, Enum) else k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (set, frozenset)):
        return sorted(plain(v) for v in obj)
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def dumps(obj: Any) -> str:
    return json.dumps(plain(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def dumpb(obj: Any) -> bytes:
    return dumps(obj).encode("utf-8")


def loads(text: str | bytes) -> Any:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return json.loads(text)
