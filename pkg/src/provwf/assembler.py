"""Goal-conditioned workflow assembly by backward chaining over typed slots.

Planning starts from the goal's target type and regresses: a required type
is satisfied by a registered artifact matching the slot predicates, by an
output already planned in the current branch, or by instantiating the type's
producer rule and recursing into its inputs. Genuine ambiguity (multiple
producers, multiple matching artifacts for a cardinality-one slot, an
unbound parameter without default) is never tie-broken silently; it surfaces
as a clarification the user answers through goal directives.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .canonical import digest
from .contract import Artifact, Registry
from .errors import (
    ApprovalError,
    CatalogError,
    CyclicCatalogError,
    InfeasibleGoal,
    QuerySyntaxError,
)
from .predicates import TRUE, Predicate
from .query import parse_predicate
from .rules import ALL_IN_SCOPE, Catalog, InputSlot, RuleSpec
from .values import kind_of

DRAFT = "DRAFT"
APPROVED = "APPROVED"

FAN_OUT_ALL = "all"
FAN_OUT_FIRST = "first"


@dataclass(frozen=True)
class Goal:
    """A structured, executable analytical goal."""

    target_type: str
    where_text: str = ""
    subject: str | None = None
    session: str | None = None
    dataset_level: bool = False
    directives: tuple[tuple[str, Any], ...] = ()

    @property
    def target_predicates(self) -> tuple[Predicate, ...]:
        if not self.where_text:
            return ()
        return (parse_predicate(self.where_text),)

    def directive_map(self) -> dict[str, Any]:
        return dict(self.directives)

    def with_directive(self, key: str, value: Any) -> "Goal":
        kept = tuple((k, v) for k, v in self.directives if k != key)
        return replace(self, directives=kept + ((key, value),))

    def to_canonical(self) -> dict[str, Any]:
        return {
            "target_type": self.target_type,
            "where": self.where_text,
            "subject": self.subject,
            "session": self.session,
            "dataset_level": self.dataset_level,
            "directives": {k: v for k, v in self.directives},
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Goal":
        return cls(
            target_type=rec["target_type"],
            where_text=rec.get("where", ""),
            subject=rec.get("subject"),
            session=rec.get("session"),
            dataset_level=bool(rec.get("dataset_level", False)),
            directives=tuple(sorted(rec.get("directives", {}).items())),
        )


@dataclass(frozen=True)
class Clarification:
    question_id: str
    question: str
    options: tuple[str, ...]
    binding_target: str  # the directive key an answer binds

    def to_record(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "question": self.question,
            "options": list(self.options),
            "binding_target": self.binding_target,
        }


# A binding is ("artifact", type, logical_name) for a registered artifact or
# ("planned", producer_instance_id, output_slot) for an in-plan output.
Binding = tuple[str, str, str]


@dataclass(frozen=True)
class RuleInstance:
    instance_id: str
    rule_id: str
    subject: str
    session: str
    bindings: tuple[tuple[str, Binding], ...]  # slot name -> binding
    params: tuple[tuple[str, Any], ...]

    @property
    def scope(self) -> tuple[str, str]:
        return (self.subject, self.session)

    def binding_map(self) -> dict[str, Binding]:
        return dict(self.bindings)

    def param_map(self) -> dict[str, Any]:
        return dict(self.params)

    def to_canonical(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "scope": {"subject": self.subject, "session": self.session},
            "bindings": {name: list(b) for name, b in self.bindings},
            "params": {k: v for k, v in self.params},
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "RuleInstance":
        return _make_instance(
            rec["rule_id"],
            rec["scope"]["subject"],
            rec["scope"]["session"],
            {name: tuple(b) for name, b in rec["bindings"].items()},
            dict(rec["params"]),
        )


def _make_instance(rule_id: str, subject: str, session: str,
                   bindings: dict[str, Binding], params: dict[str, Any]) -> RuleInstance:
    ordered_bindings = tuple(sorted(bindings.items()))
    ordered_params = tuple(sorted(params.items()))
    body = {
        "rule_id": rule_id,
        "scope": {"subject": subject, "session": session},
        "bindings": {name: list(b) for name, b in ordered_bindings},
        "params": {k: v for k, v in ordered_params},
    }
    return RuleInstance(
        instance_id=digest(body),
        rule_id=rule_id,
        subject=subject,
        session=session,
        bindings=ordered_bindings,
        params=ordered_params,
    )


@dataclass(frozen=True)
class Configuration:
    """The sealed unit of reproducibility: ordered instances plus parameters."""

    goal: Goal
    catalog_fingerprint: str
    instances: tuple[RuleInstance, ...]
    assumptions: tuple[str, ...] = ()
    seal: str = DRAFT

    @property
    def fingerprint(self) -> str:
        return digest(self.to_canonical())

    def rule_ids(self) -> list[str]:
        return sorted({i.rule_id for i in self.instances})

    def to_canonical(self) -> dict[str, Any]:
        # the seal flag and derived assumption text do not alter identity
        return {
            "goal": self.goal.to_canonical(),
            "catalog_fingerprint": self.catalog_fingerprint,
            "instances": [i.to_canonical() for i in self.instances],
        }

    def to_record(self) -> dict[str, Any]:
        rec = self.to_canonical()
        rec["assumptions"] = list(self.assumptions)
        rec["seal"] = self.seal
        rec["fingerprint"] = self.fingerprint
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Configuration":
        config = cls(
            goal=Goal.from_record(rec["goal"]),
            catalog_fingerprint=rec["catalog_fingerprint"],
            instances=tuple(RuleInstance.from_record(r) for r in rec["instances"]),
            assumptions=tuple(rec.get("assumptions", ())),
            seal=rec.get("seal", DRAFT),
        )
        stored = rec.get("fingerprint")
        if stored is not None and stored != config.fingerprint:
            raise ApprovalError("stored plan fingerprint does not match its content")
        return config


@dataclass(frozen=True)
class FeasibilityReport:
    satisfiable: bool
    missing_capabilities: tuple[str, ...] = ()
    assumptions: tuple[str, ...] = ()


@dataclass
class AssemblyResult:
    """Either a draft configuration or the clarifications blocking one.

    suggested_rule_ids is always populated (using provisional resolutions
    when ambiguity is outstanding) so a dialog can present the tentative
    selection alongside its questions.
    """

    config: Configuration | None
    clarifications: list[Clarification] = field(default_factory=list)
    suggested_rule_ids: list[str] = field(default_factory=list)
    assumptions: list[str] = field(default_factory=list)

    @property
    def needs_clarification(self) -> bool:
        return self.config is None


class _Clarify(Exception):
    def __init__(self, clarification: Clarification):
        self.clarification = clarification


class _Split(Exception):
    def __init__(self, key: str, choices: list[str]):
        self.key = key
        self.choices = choices


class _Context:
    """One planning branch: memoized resolutions plus forced fan-out choices."""

    def __init__(self, forced: dict[str, str] | None = None):
        self.forced = dict(forced or {})
        self.memo: dict[tuple[str, Any], Binding] = {}
        self.planned_by_type: dict[str, Binding] = {}
        self.instances: list[RuleInstance] = []


def _visible_current(registry: Registry, artifact_type: str, subject: str, session: str) -> list[Artifact]:
    """Current (latest) artifacts of a type visible from a scope.

    Visibility is hierarchical: exact scope, subject level, then dataset
    level. Superseded versions (same type+scope+name, lower sequence) are
    dropped.
    """
    candidates = []
    for a in registry.lookup(artifact_type=artifact_type):
        if (a.subject, a.session) in {(subject, session), (subject, ""), ("", "")}:
            candidates.append(a)
    latest: dict[tuple[str, str, str], Artifact] = {}
    for a in candidates:
        latest[(a.subject, a.session, a.logical_name)] = a  # sequence order
    return sorted(latest.values(), key=lambda a: (a.subject, a.session, a.logical_name))


def _matching(slot_type: str, predicates: tuple[Predicate, ...], registry: Registry,
              subject: str, session: str) -> list[Artifact]:
    out = []
    for a in _visible_current(registry, slot_type, subject, session):
        if all(p.evaluate(a.attributes) is TRUE for p in predicates):
            out.append(a)
    return out


class _Planner:
    def __init__(self, goal: Goal, registry: Registry, catalog: Catalog, provisional: bool):
        self.goal = goal
        self.registry = registry
        self.catalog = catalog
        self.provisional = provisional
        self.directives = goal.directive_map()
        self.assumptions: list[str] = []
        self.instances: dict[str, RuleInstance] = {}

    # -- scope selection ----------------------------------------------------

    def scopes(self) -> list[tuple[str, str]]:
        if self.goal.dataset_level:
            return [("", "")]
        scopes = [
            s for s in self.registry.scopes()
            if (self.goal.subject is None or s[0] == self.goal.subject)
            and (self.goal.session is None or s[1] == self.goal.session)
        ]
        return scopes or [("", "")]

    # -- directive helpers ----------------------------------------------------

    def _fan_out_choice(self, rule_id: str, slot: InputSlot, scope_label: str,
                        candidates: list[Artifact]) -> str:
        key = f"fanout.{rule_id}.{slot.name}"
        if slot.cardinality == ALL_IN_SCOPE:
            return FAN_OUT_ALL
        choice = self.directives.get(key)
        if choice is None:
            if self.provisional:
                return FAN_OUT_FIRST
            names = ", ".join(a.logical_name for a in candidates[:4])
            raise _Clarify(Clarification(
                question_id=key,
                question=(
                    f"Multiple {slot.required_type} artifacts match input '{slot.name}' of "
                    f"rule '{rule_id}' (e.g. in scope {scope_label}: {names}). "
                    "Process them all, or only the first?"
                ),
                options=(FAN_OUT_ALL, FAN_OUT_FIRST),
                binding_target=key,
            ))
        if choice not in (FAN_OUT_ALL, FAN_OUT_FIRST):
            raise InfeasibleGoal(slot.required_type,
                                 f"directive {key}={choice!r} must be '{FAN_OUT_ALL}' or '{FAN_OUT_FIRST}'")
        return str(choice)

    def _producer_choice(self, artifact_type: str, producers: list[str]) -> str:
        key = f"producer.{artifact_type}"
        choice = self.directives.get(key)
        if choice is None:
            if self.provisional:
                return producers[0]
            raise _Clarify(Clarification(
                question_id=key,
                question=f"Multiple rules can produce '{artifact_type}'. Which one should be used?",
                options=tuple(producers),
                binding_target=key,
            ))
        if choice not in producers:
            raise InfeasibleGoal(artifact_type, f"directive {key}={choice!r} is not a producer")
        return str(choice)

    def _bind_params(self, rule: RuleSpec) -> dict[str, Any]:
        binding: dict[str, Any] = {}
        for schema in rule.params:
            key = f"param.{rule.rule_id}.{schema.name}"
            if key in self.directives:
                value = self.directives[key]
                if not schema.in_domain(value):
                    raise InfeasibleGoal(
                        rule.rule_id, f"directive {key}={value!r} is outside the parameter domain")
                binding[schema.name] = value
            elif schema.has_default:
                binding[schema.name] = schema.default
                note = f"{rule.rule_id}: parameter '{schema.name}' defaulted to {schema.default!r}"
                if note not in self.assumptions:
                    self.assumptions.append(note)
            else:
                if self.provisional:
                    binding[schema.name] = {"text": "", "int": 0, "float": 0.0, "bool": False}[schema.value_type]
                    continue
                options = tuple(str(c) for c in schema.choices) if schema.choices else ("<enter a value>", "abort")
                raise _Clarify(Clarification(
                    question_id=key,
                    question=f"Rule '{rule.rule_id}' needs a value for parameter '{schema.name}'.",
                    options=options,
                    binding_target=key,
                ))
        return binding

    # -- core recursion ---------------------------------------------------------

    def ensure(self, artifact_type: str, predicates: tuple[Predicate, ...],
               demander: tuple[str, InputSlot] | None, ctx: _Context,
               subject: str, session: str, stack: tuple[str, ...]) -> Binding:
        memo_key = (artifact_type, tuple(str(p.to_canonical()) for p in predicates))
        if memo_key in ctx.memo:
            return ctx.memo[memo_key]

        candidates = _matching(artifact_type, predicates, self.registry, subject, session)
        if candidates:
            if len(candidates) == 1:
                chosen = candidates[0]
            else:
                scope_label = f"{subject}/{session}" if session else (subject or "<dataset>")
                if demander is not None:
                    rule_id, slot = demander
                    choice = self._fan_out_choice(rule_id, slot, scope_label, candidates)
                else:
                    # multiple existing targets: nothing to plan either way
                    choice = FAN_OUT_ALL
                if choice == FAN_OUT_FIRST:
                    chosen = candidates[0]
                else:
                    split_key = f"{subject}/{session}:{artifact_type}:{demander[1].name if demander else 'goal'}"
                    forced = ctx.forced.get(split_key)
                    if forced is None:
                        raise _Split(split_key, [a.logical_name for a in candidates])
                    by_name = {a.logical_name: a for a in candidates}
                    chosen = by_name[forced]
            binding: Binding = ("artifact", chosen.artifact_type, chosen.logical_name)
            ctx.memo[memo_key] = binding
            return binding

        if artifact_type in ctx.planned_by_type:
            binding = ctx.planned_by_type[artifact_type]
            ctx.memo[memo_key] = binding
            return binding

        producers = [
            r for r in self.catalog.rules
            if any(o.produced_type == artifact_type for o in self.catalog.rules[r].outputs)
        ]
        producers.sort()
        if not producers:
            raise InfeasibleGoal(artifact_type)
        rule_id = producers[0] if len(producers) == 1 else self._producer_choice(artifact_type, producers)
        if rule_id in stack:
            cycle = list(stack[stack.index(rule_id):]) + [rule_id]
            raise CyclicCatalogError(cycle)
        rule = self.catalog.rules[rule_id]

        bindings: dict[str, Binding] = {}
        for slot in rule.inputs:
            bindings[slot.name] = self.ensure(
                slot.required_type, slot.predicates, (rule_id, slot), ctx,
                subject, session, stack + (rule_id,),
            )
        params = self._bind_params(rule)
        instance = _make_instance(rule_id, subject, session, bindings, params)
        if instance.instance_id not in self.instances:
            self.instances[instance.instance_id] = instance
        ctx.instances.append(instance)
        for out in rule.outputs:
            ctx.planned_by_type.setdefault(out.produced_type, ("planned", instance.instance_id, out.name))
        binding = ctx.planned_by_type[artifact_type]
        ctx.memo[memo_key] = binding
        return binding

    def plan_scope(self, subject: str, session: str) -> None:
        pending = [_Context()]
        guard = 0
        while pending:
            guard += 1
            if guard > 10000:
                raise CatalogError("fan-out explosion: more than 10000 planning branches")
            ctx = pending.pop(0)
            try:
                self.ensure(self.goal.target_type, self.goal.target_predicates,
                            None, ctx, subject, session, ())
            except _Split as split:
                for choice in split.choices:
                    branched = _Context(forced={**ctx.forced, split.key: choice})
                    pending.append(branched)

    def run(self) -> AssemblyResult:
        clarifications: dict[str, Clarification] = {}
        for subject, session in self.scopes():
            try:
                self.plan_scope(subject, session)
            except _Clarify as c:
                clarifications.setdefault(c.clarification.question_id, c.clarification)
        if clarifications:
            provisional = _Planner(self.goal, self.registry, self.catalog, provisional=True)
            suggested = provisional.run_provisional()
            return AssemblyResult(
                config=None,
                clarifications=sorted(clarifications.values(), key=lambda c: c.question_id),
                suggested_rule_ids=suggested,
                assumptions=list(self.assumptions),
            )
        ordered = _topological(list(self.instances.values()))
        config = Configuration(
            goal=self.goal,
            catalog_fingerprint=self.catalog.catalog_fingerprint,
            instances=tuple(ordered),
            assumptions=tuple(self.assumptions),
            seal=DRAFT,
        )
        return AssemblyResult(
            config=config,
            suggested_rule_ids=config.rule_ids(),
            assumptions=list(self.assumptions),
        )

    def run_provisional(self) -> list[str]:
        for subject, session in self.scopes():
            try:
                self.plan_scope(subject, session)
            except (InfeasibleGoal, CyclicCatalogError):
                break
        return sorted({i.rule_id for i in self.instances.values()})


def _topological(instances: list[RuleInstance]) -> list[RuleInstance]:
    """Deterministic topological order, ties broken by (rule_id, scope, inputs)."""
    by_id = {i.instance_id: i for i in instances}
    deps: dict[str, set[str]] = {i.instance_id: set() for i in instances}
    for inst in instances:
        for _, binding in inst.bindings:
            if binding[0] == "planned" and binding[1] in by_id:
                deps[inst.instance_id].add(binding[1])

    def sort_key(iid: str):
        inst = by_id[iid]
        return (inst.rule_id, inst.subject, inst.session,
                tuple(b for _, b in inst.bindings), iid)

    ordered: list[RuleInstance] = []
    remaining = dict(deps)
    while remaining:
        ready = sorted((i for i, d in remaining.items() if not d), key=sort_key)
        if not ready:
            raise CatalogError("internal: instance dependency cycle")
        for iid in ready:
            ordered.append(by_id[iid])
            del remaining[iid]
        for d in remaining.values():
            d.difference_update(set(r for r in ready))
    return ordered


# -- public operations ----------------------------------------------------------


def assemble(goal: Goal, registry: Registry, catalog: Catalog) -> AssemblyResult:
    """Backward-chain a dependency-complete draft configuration for the goal."""
    _validate_goal(goal, registry, catalog)
    return _Planner(goal, registry, catalog, provisional=False).run()


def check_feasibility(goal: Goal, registry: Registry, catalog: Catalog) -> FeasibilityReport:
    """Pure analysis: can the goal be satisfied, and what would be assumed?"""
    missing: list[str] = []
    assumptions: list[str] = []
    seen: set[str] = set()

    scopes = _Planner(goal, registry, catalog, provisional=True).scopes()

    def walk(artifact_type: str, stack: tuple[str, ...]) -> None:
        if artifact_type in seen:
            return
        seen.add(artifact_type)
        for subject, session in scopes:
            if _matching(artifact_type, (), registry, subject, session):
                return
        producers = sorted(
            r for r in catalog.rules
            if any(o.produced_type == artifact_type for o in catalog.rules[r].outputs)
        )
        if not producers:
            missing.append(artifact_type)
            return
        for rule_id in producers[:1] if len(producers) == 1 else producers:
            if rule_id in stack:
                continue
            rule = catalog.rules[rule_id]
            for schema in rule.params:
                if schema.has_default:
                    note = f"{rule_id}: parameter '{schema.name}' defaulted to {schema.default!r}"
                    if note not in assumptions:
                        assumptions.append(note)
            for slot in rule.inputs:
                walk(slot.required_type, stack + (rule_id,))

    walk(goal.target_type, ())
    return FeasibilityReport(
        satisfiable=not missing,
        missing_capabilities=tuple(sorted(set(missing))),
        assumptions=tuple(assumptions),
    )


def approve(config: Configuration) -> Configuration:
    """Seal a draft. Sealed configurations are immutable and executable."""
    if config.seal == APPROVED:
        return config
    if config.seal != DRAFT:
        raise ApprovalError(f"cannot approve a configuration in state {config.seal!r}")
    return replace(config, seal=APPROVED)


def render_plan(config: Configuration) -> str:
    """Human-readable plan summary (rules, counts, assumptions)."""
    if not config.instances:
        return "Plan: already satisfied - no tasks required.\n"
    lines = [f"Plan for goal '{config.goal.target_type}' "
             f"({len(config.instances)} task(s), state {config.seal}):"]
    counts: dict[str, int] = {}
    for inst in config.instances:
        counts[inst.rule_id] = counts.get(inst.rule_id, 0) + 1
    for rule_id in sorted(counts):
        lines.append(f"  - {rule_id}: {counts[rule_id]} instance(s)")
    if config.assumptions:
        lines.append("Assumptions made:")
        for note in config.assumptions:
            lines.append(f"  * {note}")
    lines.append(f"Configuration fingerprint: {config.fingerprint}")
    return "\n".join(lines) + "\n"


def _validate_goal(goal: Goal, registry: Registry, catalog: Catalog) -> None:
    if not goal.target_type:
        raise InfeasibleGoal("", "goal has no target type")
    known = catalog.output_types() | set(registry.types())
    if goal.target_type not in known:
        raise InfeasibleGoal(goal.target_type,
                             f"type '{goal.target_type}' is not produced by any rule "
                             "and no artifact of that type exists")
    for key, value in goal.directives:
        _validate_directive(key, value, catalog)


def _validate_directive(key: str, value: Any, catalog: Catalog) -> None:
    parts = key.split(".")
    if parts[0] == "param" and len(parts) == 3:
        rule = catalog.get(parts[1])
        if rule is None or rule.param(parts[2]) is None:
            raise InfeasibleGoal(key, f"directive '{key}' names an unknown rule parameter")
        if kind_of(value) is None:
            raise InfeasibleGoal(key, f"directive '{key}' value is not a scalar")
        return
    if parts[0] == "fanout" and len(parts) == 3:
        rule = catalog.get(parts[1])
        if rule is None or all(s.name != parts[2] for s in rule.inputs):
            raise InfeasibleGoal(key, f"directive '{key}' names an unknown input slot")
        return
    if parts[0] == "producer" and len(parts) >= 2:
        return
    raise InfeasibleGoal(key, f"directive '{key}' is not a parameter, fan-out, or producer choice")


# -- goal interpretation -----------------------------------------------------------


def parse_goal_toml(text: str, catalog: Catalog, registry: Registry) -> Goal:
    """Parse a structured goal file (``goal.toml``)."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InfeasibleGoal("", f"goal file is not valid TOML: {exc}") from exc
    target = doc.get("target_type")
    if not isinstance(target, str) or not target:
        raise InfeasibleGoal("", "goal file must set target_type")
    where = doc.get("where", "")
    if where:
        try:
            parse_predicate(where)
        except QuerySyntaxError as exc:
            raise InfeasibleGoal(target, f"goal where clause does not parse: {exc}") from exc
    scope = doc.get("scope", {})
    directives = doc.get("directives", {})
    if not isinstance(directives, dict):
        raise InfeasibleGoal(target, "directives must be a table")
    goal = Goal(
        target_type=target,
        where_text=where,
        subject=scope.get("subject"),
        session=scope.get("session"),
        dataset_level=bool(scope.get("dataset_level", False)),
        directives=tuple(sorted(directives.items())),
    )
    _validate_goal(goal, registry, catalog)
    return goal


def keyword_goal(text: str, catalog: Catalog) -> Goal | None:
    """Deterministic keyword mapping from free text to a goal target.

    Scores each producible type by token overlap (prefix matching in both
    directions, so "segment" matches "seg"). Returns None on no or tied
    match; the caller should then ask for a structured goal.
    """
    words = [w.strip(".,!?;:()\"'").lower() for w in text.split()]
    words = [w for w in words if w]
    scores: dict[str, int] = {}
    for artifact_type in sorted(catalog.output_types()):
        tokens = artifact_type.lower().split("_")
        score = 0
        for token in tokens:
            for word in words:
                if word.startswith(token) or token.startswith(word):
                    score += 1
                    break
        if score:
            scores[artifact_type] = score
    if not scores:
        return None
    best = max(scores.values())
    winners = [t for t, s in scores.items() if s == best]
    if len(winners) != 1:
        return None
    return Goal(target_type=winners[0])


def interpret_goal(
    request: str | Mapping[str, Any] | Path,
    registry: Registry,
    catalog: Catalog,
    goal_adapter=None,
) -> Goal | list[Clarification]:
    """Turn a request (goal file, TOML text, or free text) into a Goal.

    Structured input is validated directly. Free text goes through the
    built-in keyword interpreter (or an optional adapter proposing goal
    TOML); both land in the same Goal type. Outstanding ambiguity comes back
    as Clarifications.
    """
    goal: Goal | None = None
    if isinstance(request, Path):
        goal = parse_goal_toml(request.read_text(encoding="utf-8"), catalog, registry)
    elif isinstance(request, Mapping):
        goal = Goal(
            target_type=str(request.get("target_type", "")),
            where_text=str(request.get("where", "")),
            subject=request.get("subject"),
            session=request.get("session"),
            dataset_level=bool(request.get("dataset_level", False)),
            directives=tuple(sorted(dict(request.get("directives", {})).items())),
        )
        _validate_goal(goal, registry, catalog)
    elif isinstance(request, str):
        if "target_type" in request and "=" in request:
            goal = parse_goal_toml(request, catalog, registry)
        else:
            if goal_adapter is not None:
                proposal = goal_adapter.translate(request)
                goal = parse_goal_toml(proposal, catalog, registry)
            else:
                goal = keyword_goal(request, catalog)
                if goal is None:
                    raise InfeasibleGoal(
                        "", "could not map the request onto a producible artifact type; "
                        "provide a structured goal (goal.toml)")
                _validate_goal(goal, registry, catalog)
    else:
        raise InfeasibleGoal("", f"unsupported goal request type {type(request).__name__}")

    result = _Planner(goal, registry, catalog, provisional=False).run()
    if result.needs_clarification:
        return result.clarifications
    return goal
