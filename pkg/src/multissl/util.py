"""Small shared helpers: canonical JSON and stable hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Any


def to_plain(obj: Any) -> Any:
    """Recursively convert dataclasses/tuples/numpy scalars to JSON-able values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return obj.item()
    return obj


def canonical_json(obj: Any) -> str:
    """Deterministic JSON representation (sorted keys, no whitespace drift)."""
    return json.dumps(to_plain(obj), sort_keys=True, separators=(",", ":"))


def stable_hash(obj: Any) -> str:
    """Hex digest of the canonical JSON of obj."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
