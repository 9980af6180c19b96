"""Rule catalog: loading, validation, and fingerprinting of processing rules.

Each rule lives in its own ``*.rule.toml`` file and declares typed input
slots, output slots, a parameter schema, and an action command template.
Fingerprints are computed over the parsed, canonicalized rule, so formatting
and comments never change identity.
"""

from __future__ import annotations

import logging
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .canonical import digest
from .contract import Artifact
from .errors import CatalogError, QuerySyntaxError
from .predicates import TRUE, Predicate
from .query import parse_predicate
from .values import SCALAR_KINDS, kind_of

log = logging.getLogger(__name__)

ONE = "one"
ALL_IN_SCOPE = "all_in_scope"

_RULE_ID = re.compile(r"^[a-z0-9_]+$")
_PLACEHOLDER = re.compile(r"\{(input|output|param)\.([A-Za-z_][A-Za-z0-9_]*)\}")

# Attribute names the default metadata extractor can emit; used for the
# load-time closure warning, not for enforcement.
EXTRACTOR_SCHEMA = {
    "format", "type", "modality", "manufacturer", "slice_thickness_mm",
    "voxel_spacing_mm", "body_part", "reconstruction_kernel", "series_description",
    "size_bytes", "path", "filename",
}


@dataclass(frozen=True)
class InputSlot:
    name: str
    required_type: str
    predicates: tuple[Predicate, ...] = ()
    cardinality: str = ONE
    where_text: str = ""

    def to_canonical(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "required_type": self.required_type,
            "predicates": [p.to_canonical() for p in self.predicates],
            "cardinality": self.cardinality,
        }


@dataclass(frozen=True)
class OutputSlot:
    name: str
    produced_type: str
    attribute_template: dict[str, Any] = field(default_factory=dict)

    def to_canonical(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "produced_type": self.produced_type,
            "attribute_template": dict(self.attribute_template),
        }


@dataclass(frozen=True)
class ParamSchema:
    name: str
    value_type: str  # one of the scalar kinds
    default: Any = None
    has_default: bool = False
    choices: tuple[Any, ...] | None = None
    minimum: float | None = None
    maximum: float | None = None

    def in_domain(self, value: Any) -> bool:
        kind = kind_of(value)
        if self.value_type == "float":
            if kind not in ("int", "float"):
                return False
        elif kind != self.value_type:
            return False
        if self.choices is not None and value not in self.choices:
            return False
        if self.minimum is not None and value < self.minimum:
            return False
        if self.maximum is not None and value > self.maximum:
            return False
        return True

    def to_canonical(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "value_type": self.value_type,
            "default": self.default if self.has_default else None,
            "has_default": self.has_default,
            "choices": list(self.choices) if self.choices is not None else None,
            "minimum": self.minimum,
            "maximum": self.maximum,
        }


@dataclass(frozen=True)
class RuleSpec:
    rule_id: str
    version: str
    inputs: tuple[InputSlot, ...]
    outputs: tuple[OutputSlot, ...]
    params: tuple[ParamSchema, ...]
    action: str = ""
    emits: tuple[str, ...] = ()

    def param(self, name: str) -> ParamSchema | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def output_for_type(self, artifact_type: str) -> OutputSlot | None:
        for out in self.outputs:
            if out.produced_type == artifact_type:
                return out
        return None

    def default_binding(self) -> dict[str, Any]:
        return {p.name: p.default for p in self.params if p.has_default}

    def to_canonical(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "version": self.version,
            "inputs": [s.to_canonical() for s in self.inputs],
            "outputs": [s.to_canonical() for s in self.outputs],
            "params": [p.to_canonical() for p in self.params],
            "action": self.action,
            "emits": list(self.emits),
        }


def rule_fingerprint(rule: RuleSpec) -> str:
    """Digest of the canonical rule; whitespace and comments play no part."""
    return digest(rule.to_canonical())


@dataclass
class Catalog:
    rules: dict[str, RuleSpec]
    catalog_fingerprint: str
    warnings: list[str] = field(default_factory=list)

    def __contains__(self, rule_id: str) -> bool:
        return rule_id in self.rules

    def __len__(self) -> int:
        return len(self.rules)

    def get(self, rule_id: str) -> RuleSpec | None:
        return self.rules.get(rule_id)

    def fingerprint_of(self, rule_id: str) -> str:
        return rule_fingerprint(self.rules[rule_id])

    def output_types(self) -> set[str]:
        return {o.produced_type for r in self.rules.values() for o in r.outputs}


def _want(table: dict, key: str, types, where: str, default=None, required=False):
    if key not in table:
        if required:
            raise CatalogError(f"{where}: missing key '{key}'")
        return default
    value = table[key]
    if not isinstance(value, types):
        raise CatalogError(f"{where}: key '{key}' has wrong type {type(value).__name__}")
    return value


def _parse_slot_predicates(where_text: str, where: str) -> tuple[Predicate, ...]:
    if not where_text:
        return ()
    try:
        return (parse_predicate(where_text),)
    except QuerySyntaxError as exc:
        raise CatalogError(f"{where}: bad where clause: {exc}") from exc


def _parse_param(name: str, table: dict, where: str) -> ParamSchema:
    value_type = _want(table, "type", str, where, required=True)
    if value_type not in SCALAR_KINDS:
        raise CatalogError(f"{where}: param type must be one of {SCALAR_KINDS}")
    choices = table.get("choices")
    if choices is not None and not isinstance(choices, list):
        raise CatalogError(f"{where}: choices must be a list")
    minimum = table.get("min")
    maximum = table.get("max")
    schema = ParamSchema(
        name=name,
        value_type=value_type,
        default=table.get("default"),
        has_default="default" in table,
        choices=tuple(choices) if choices is not None else None,
        minimum=minimum,
        maximum=maximum,
    )
    if schema.has_default and not schema.in_domain(schema.default):
        raise CatalogError(f"{where}: default {schema.default!r} is outside the declared domain")
    return schema


def parse_rule(text: str, source: str = "<string>") -> RuleSpec:
    """Parse and validate one rule file's contents."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise CatalogError(f"{source}: {exc}") from exc

    head = _want(doc, "rule", dict, source, required=True)
    rule_id = _want(head, "id", str, f"{source} [rule]", required=True)
    if not _RULE_ID.match(rule_id):
        raise CatalogError(f"{source}: rule id {rule_id!r} must match [a-z0-9_]+")
    version = _want(head, "version", str, f"{source} [rule]", default="0")
    action = _want(head, "action", str, f"{source} [rule]", default="")
    emits_raw = _want(head, "emits", list, f"{source} [rule]", default=[])
    if not all(isinstance(e, str) for e in emits_raw):
        raise CatalogError(f"{source}: emits must be a list of attribute names")

    inputs: list[InputSlot] = []
    for i, slot in enumerate(doc.get("input", [])):
        where = f"{source} [[input]] #{i + 1}"
        name = _want(slot, "name", str, where, required=True)
        required_type = _want(slot, "type", str, where, required=True)
        cardinality = _want(slot, "cardinality", str, where, default=ONE)
        if cardinality not in (ONE, ALL_IN_SCOPE):
            raise CatalogError(f"{where}: cardinality must be '{ONE}' or '{ALL_IN_SCOPE}'")
        where_text = _want(slot, "where", str, where, default="")
        inputs.append(
            InputSlot(
                name=name,
                required_type=required_type,
                predicates=_parse_slot_predicates(where_text, where),
                cardinality=cardinality,
                where_text=where_text,
            )
        )
    if len({s.name for s in inputs}) != len(inputs):
        raise CatalogError(f"{source}: duplicate input slot names")

    outputs: list[OutputSlot] = []
    for i, slot in enumerate(doc.get("output", [])):
        where = f"{source} [[output]] #{i + 1}"
        name = _want(slot, "name", str, where, required=True)
        produced_type = _want(slot, "type", str, where, required=True)
        template = _want(slot, "attributes", dict, where, default={})
        outputs.append(OutputSlot(name=name, produced_type=produced_type, attribute_template=dict(template)))
    if not outputs:
        raise CatalogError(f"{source}: rule must declare at least one output")
    if len({s.name for s in outputs}) != len(outputs):
        raise CatalogError(f"{source}: duplicate output slot names")

    params = tuple(
        _parse_param(name, table, f"{source} [params.{name}]")
        for name, table in sorted(doc.get("params", {}).items())
    )

    rule = RuleSpec(
        rule_id=rule_id,
        version=version,
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        params=params,
        action=action,
        emits=tuple(emits_raw),
    )
    _validate_rule(rule, source)
    return rule


def _validate_rule(rule: RuleSpec, source: str) -> None:
    param_names = {p.name for p in rule.params}
    input_names = {s.name for s in rule.inputs}
    output_names = {s.name for s in rule.outputs}
    for kind, name in _PLACEHOLDER.findall(rule.action):
        declared = {"input": input_names, "output": output_names, "param": param_names}[kind]
        if name not in declared:
            raise CatalogError(f"{source}: action references undeclared {kind} '{name}'")
    for out in rule.outputs:
        for key, value in out.attribute_template.items():
            if isinstance(value, str):
                for kind, name in _PLACEHOLDER.findall(value):
                    if kind != "param" or name not in param_names:
                        raise CatalogError(
                            f"{source}: output template '{key}' may only substitute declared params"
                        )
            elif kind_of(value) is None:
                raise CatalogError(f"{source}: output template '{key}' is not a scalar")
        # a no-predicate input of the same type would trivially satisfy itself
        for slot in rule.inputs:
            if slot.required_type == out.produced_type and not slot.predicates:
                raise CatalogError(
                    f"{source}: output type '{out.produced_type}' equals unconstrained "
                    f"input slot '{slot.name}' (trivial self-loop)"
                )


def load_catalog(directory: str | Path) -> Catalog:
    """Load every ``*.rule.toml`` under directory into a validated catalog.

    The result is independent of filesystem enumeration order: rules are
    keyed by id and the catalog fingerprint hashes the sorted rule
    fingerprints.
    """
    root = Path(directory)
    if not root.is_dir():
        raise CatalogError(f"catalog directory {root} does not exist")
    rules: dict[str, RuleSpec] = {}
    sources: dict[str, str] = {}
    for path in sorted(root.glob("*.rule.toml")):
        rule = parse_rule(path.read_text(encoding="utf-8"), source=str(path))
        if rule.rule_id in rules:
            raise CatalogError(
                f"duplicate rule id '{rule.rule_id}' in {path} (also in {sources[rule.rule_id]})"
            )
        rules[rule.rule_id] = rule
        sources[rule.rule_id] = str(path)

    fingerprint = digest(sorted(rule_fingerprint(r) for r in rules.values()))
    catalog = Catalog(rules=rules, catalog_fingerprint=fingerprint)
    catalog.warnings.extend(_closure_warnings(catalog))
    for w in catalog.warnings:
        log.warning("%s", w)
    return catalog


def _closure_warnings(catalog: Catalog) -> list[str]:
    """Warn when a predicate or template references an attribute nothing emits."""
    known = set(EXTRACTOR_SCHEMA)
    for rule in catalog.rules.values():
        known.update(rule.emits)
        for out in rule.outputs:
            known.update(out.attribute_template)
    warnings = []
    for rule in sorted(catalog.rules, key=str):
        spec = catalog.rules[rule]
        referenced: set[str] = set()
        for slot in spec.inputs:
            for pred in slot.predicates:
                referenced.update(pred.attribute_paths())
        for name in sorted(referenced):
            base = name.split(".", 1)[0]
            if name not in known and base not in known:
                warnings.append(
                    f"rule '{rule}' references attribute '{name}' that no rule emits "
                    "and the extractor does not produce"
                )
    return warnings


def match_input(slot: InputSlot, artifact: Artifact) -> bool:
    """True iff the artifact's type matches and every predicate holds.

    Evaluation shares the query module's three-valued semantics; UNKNOWN is
    not a match.
    """
    if artifact.artifact_type != slot.required_type:
        return False
    for pred in slot.predicates:
        if pred.evaluate(artifact.attributes) is not TRUE:
            return False
    return True


def producers_of(catalog: Catalog, artifact_type: str) -> list[str]:
    """Rule ids with an output slot of the given type, sorted."""
    return sorted(
        rule_id
        for rule_id, rule in catalog.rules.items()
        if any(o.produced_type == artifact_type for o in rule.outputs)
    )
