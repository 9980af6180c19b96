"""Canonical byte encoding and the system-wide digest.

Everything that gets fingerprinted (artifacts, rules, configurations, DAGs)
goes through the same encoder: JSON with bytewise-sorted keys, no
insignificant whitespace, base-10 integers, shortest round-trip floats, and
UTF-8 text. One digest algorithm (SHA-256) is used everywhere so fingerprints
are comparable across modules.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any

from .errors import ContractViolation


def _reject_nonfinite(obj: Any, path: str = "$") -> None:
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ContractViolation(f"non-finite float at {path}")
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _reject_nonfinite(v, f"{path}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _reject_nonfinite(v, f"{path}[{i}]")


def canonical_json_bytes(obj: Any) -> bytes:
    """Deterministic UTF-8 JSON bytes for a JSON-able structure.

    Key order is bytewise (UTF-8 order equals code-point order, which is
    what Python string sorting gives us). json emits shortest round-trip
    decimals for floats via float.__repr__.
    """
    _reject_nonfinite(obj)
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest(obj: Any) -> str:
    """SHA-256 hex digest of the canonical encoding of obj."""
    return sha256_hex(canonical_json_bytes(obj))


def hash_file(path, chunk_size: int = 1 << 20) -> str:
    """SHA-256 hex digest of a file's contents, streamed."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            chunk = fh.read(chunk_size)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()
