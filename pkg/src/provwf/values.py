"""Attribute value domain: scalar values plus an explicit MISSING marker.

Attribute maps are the only mutable-looking state the contract admits, so the
value space is deliberately small: text, 64-bit signed integers, finite
floats, booleans, and MISSING. MISSING is representable (a key can be present
and unknown) and is distinct from an absent key; queries treat both the same.
"""

from __future__ import annotations

import math
from typing import Any, Mapping

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class _Missing:
    """Singleton marker for a present-but-unknown attribute value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"

    def __bool__(self) -> bool:
        return False


MISSING = _Missing()

# Scalar kind tags, used by comparisons and parameter schemas.
KIND_TEXT = "text"
KIND_INT = "int"
KIND_FLOAT = "float"
KIND_BOOL = "bool"
KIND_MISSING = "missing"

SCALAR_KINDS = (KIND_TEXT, KIND_INT, KIND_FLOAT, KIND_BOOL)


def kind_of(value: Any) -> str | None:
    """Return the AttributeValue kind tag, or None if out of domain.

    bool must be tested before int: Python bools are ints.
    """
    if value is MISSING:
        return KIND_MISSING
    if isinstance(value, bool):
        return KIND_BOOL
    if isinstance(value, int):
        return KIND_INT if INT64_MIN <= value <= INT64_MAX else None
    if isinstance(value, float):
        return KIND_FLOAT if math.isfinite(value) else None
    if isinstance(value, str):
        return KIND_TEXT
    return None


def is_numeric(value: Any) -> bool:
    return kind_of(value) in (KIND_INT, KIND_FLOAT)


def check_attribute_value(name: str, value: Any) -> str | None:
    """Return a violation string for an out-of-domain value, else None."""
    k = kind_of(value)
    if k is None:
        if isinstance(value, float):
            return f"attribute '{name}' is a non-finite float"
        if isinstance(value, int):
            return f"attribute '{name}' exceeds 64-bit signed integer range"
        return f"attribute '{name}' has unsupported type {type(value).__name__}"
    return None


def check_attributes(attributes: Mapping[str, Any]) -> list[str]:
    violations = []
    for name in attributes:
        if not isinstance(name, str) or not name:
            violations.append(f"attribute key {name!r} is not a non-empty string")
            continue
        v = check_attribute_value(name, attributes[name])
        if v:
            violations.append(v)
    return violations


def flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Flatten nested maps into dotted key paths; scalars pass through.

    Lists are out of the value domain and surface as violations later, so
    they are left untouched here.
    """
    flat: dict[str, Any] = {}
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, Mapping):
            flat.update(flatten(value, path))
        else:
            flat[path] = value
    return flat


def to_jsonable(value: Any) -> Any:
    """Map an attribute value into its JSON representation (MISSING -> null)."""
    return None if value is MISSING else value


def from_jsonable(value: Any) -> Any:
    """Inverse of to_jsonable: JSON null comes back as MISSING."""
    return MISSING if value is None else value
