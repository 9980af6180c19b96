"""Attribute predicates with three-valued (Kleene) evaluation.

This is the single predicate implementation shared by rule input slots and
the query DSL, so slot matching and WHERE filtering cannot diverge. A
comparison against a MISSING or absent attribute evaluates UNKNOWN; EXISTS
and MISSING tests are two-valued (presence is always decidable).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

from .values import (
    KIND_BOOL,
    KIND_FLOAT,
    KIND_INT,
    KIND_MISSING,
    KIND_TEXT,
    MISSING,
    kind_of,
)

TRUE = True
FALSE = False
UNKNOWN = None  # Kleene's third value

NUMERIC_OPS = ("<", "<=", ">", ">=")
ALL_OPS = ("=", "!=", "<", "<=", ">", ">=", "CONTAINS")


class Predicate:
    """Base class; subclasses form the expression tree."""

    def evaluate(self, attributes: Mapping[str, Any]):
        raise NotImplementedError

    def to_canonical(self) -> Any:
        raise NotImplementedError

    def attribute_paths(self) -> set[str]:
        raise NotImplementedError


@dataclass(frozen=True)
class Comparison(Predicate):
    path: str
    op: str
    literal: Any

    def evaluate(self, attributes: Mapping[str, Any]):
        value = attributes.get(self.path, MISSING)
        vkind = kind_of(value)
        lkind = kind_of(self.literal)
        if vkind == KIND_MISSING or vkind is None:
            return UNKNOWN
        numeric = (KIND_INT, KIND_FLOAT)
        if self.op == "CONTAINS":
            if vkind == KIND_TEXT and lkind == KIND_TEXT:
                return self.literal in value
            return UNKNOWN
        if vkind in numeric and lkind in numeric:
            pass  # ints and floats compare by numeric value
        elif vkind != lkind or vkind == KIND_BOOL and self.op in NUMERIC_OPS:
            return UNKNOWN
        if self.op == "=":
            return value == self.literal
        if self.op == "!=":
            return value != self.literal
        if vkind not in numeric:
            return UNKNOWN  # ordering is defined for numbers only
        if self.op == "<":
            return value < self.literal
        if self.op == "<=":
            return value <= self.literal
        if self.op == ">":
            return value > self.literal
        return value >= self.literal

    def to_canonical(self) -> Any:
        lit = None if self.literal is MISSING else self.literal
        return ["cmp", self.path, self.op, lit]

    def attribute_paths(self) -> set[str]:
        return {self.path}


@dataclass(frozen=True)
class Exists(Predicate):
    path: str

    def evaluate(self, attributes: Mapping[str, Any]):
        return attributes.get(self.path, MISSING) is not MISSING

    def to_canonical(self) -> Any:
        return ["exists", self.path]

    def attribute_paths(self) -> set[str]:
        return {self.path}


@dataclass(frozen=True)
class Missing(Predicate):
    path: str

    def evaluate(self, attributes: Mapping[str, Any]):
        return attributes.get(self.path, MISSING) is MISSING

    def to_canonical(self) -> Any:
        return ["missing", self.path]

    def attribute_paths(self) -> set[str]:
        return {self.path}


@dataclass(frozen=True)
class Not(Predicate):
    item: Predicate

    def evaluate(self, attributes: Mapping[str, Any]):
        inner = self.item.evaluate(attributes)
        return UNKNOWN if inner is UNKNOWN else not inner

    def to_canonical(self) -> Any:
        return ["not", self.item.to_canonical()]

    def attribute_paths(self) -> set[str]:
        return self.item.attribute_paths()


@dataclass(frozen=True)
class And(Predicate):
    items: tuple[Predicate, ...]

    def evaluate(self, attributes: Mapping[str, Any]):
        saw_unknown = False
        for item in self.items:
            r = item.evaluate(attributes)
            if r is FALSE:
                return FALSE
            if r is UNKNOWN:
                saw_unknown = True
        return UNKNOWN if saw_unknown else TRUE

    def to_canonical(self) -> Any:
        return ["and"] + [i.to_canonical() for i in self.items]

    def attribute_paths(self) -> set[str]:
        return set().union(*(i.attribute_paths() for i in self.items))


@dataclass(frozen=True)
class Or(Predicate):
    items: tuple[Predicate, ...]

    def evaluate(self, attributes: Mapping[str, Any]):
        saw_unknown = False
        for item in self.items:
            r = item.evaluate(attributes)
            if r is TRUE:
                return TRUE
            if r is UNKNOWN:
                saw_unknown = True
        return UNKNOWN if saw_unknown else FALSE

    def to_canonical(self) -> Any:
        return ["or"] + [i.to_canonical() for i in self.items]

    def attribute_paths(self) -> set[str]:
        return set().union(*(i.attribute_paths() for i in self.items))


ALWAYS = And(items=())  # vacuous predicate: matches everything
