"""Independent reference implementations used as test oracles.

Everything here is deliberately written in a different style from the
package code (string truth values, itertools subset search, plain dict
walks) so a defect in the implementation cannot hide in its oracle.
"""

from __future__ import annotations

import itertools
from random import Random

from provwf.predicates import And, Comparison, Exists, Missing, Not, Or
from provwf.values import MISSING

# -- three-valued predicate evaluation (strings 'T'/'F'/'U') -------------------


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def eval3(pred, attrs) -> str:
    if isinstance(pred, Comparison):
        if pred.path not in attrs or attrs[pred.path] is MISSING:
            return "U"
        v, lit = attrs[pred.path], pred.literal
        if pred.op == "CONTAINS":
            return ("T" if lit in v else "F") if isinstance(v, str) and isinstance(lit, str) else "U"
        if _num(v) and _num(lit):
            table = {"=": v == lit, "!=": v != lit, "<": v < lit,
                     "<=": v <= lit, ">": v > lit, ">=": v >= lit}
            return "T" if table[pred.op] else "F"
        same_kind = (isinstance(v, bool) and isinstance(lit, bool)) or (
            isinstance(v, str) and isinstance(lit, str))
        if not same_kind:
            return "U"
        if pred.op == "=":
            return "T" if v == lit else "F"
        if pred.op == "!=":
            return "T" if v != lit else "F"
        return "U"  # ordering only defined for numbers
    if isinstance(pred, Exists):
        return "T" if (pred.path in attrs and attrs[pred.path] is not MISSING) else "F"
    if isinstance(pred, Missing):
        return "T" if (pred.path not in attrs or attrs[pred.path] is MISSING) else "F"
    if isinstance(pred, Not):
        return {"T": "F", "F": "T", "U": "U"}[eval3(pred.item, attrs)]
    if isinstance(pred, And):
        results = [eval3(p, attrs) for p in pred.items]
        if "F" in results:
            return "F"
        return "U" if "U" in results else "T"
    if isinstance(pred, Or):
        results = [eval3(p, attrs) for p in pred.items]
        if "T" in results:
            return "T"
        return "U" if "U" in results else "F"
    raise AssertionError(f"unknown predicate {pred!r}")


def brute_force_filter(artifacts, predicate):
    """Linear scan with the independent evaluator: (true_ids, unknown_count)."""
    true_ids, unknown = [], 0
    for art in artifacts:
        verdict = eval3(predicate, dict(art.attributes))
        if verdict == "T":
            true_ids.append(art.id)
        elif verdict == "U":
            unknown += 1
    return true_ids, unknown


# -- random predicate / registry generation ------------------------------------

ATTR_VOCAB = ["alpha", "beta", "gamma", "delta", "size_mm", "grade"]
TEXT_POOL = ["Siemens", "Philips", "GE", "axial", "coronal", "x"]


def random_predicate(rng: Random, depth: int = 3, allow_not: bool = True):
    """allow_not=False also drops MISSING tests: both are negative forms."""
    roll = rng.random()
    if depth <= 0 or roll < 0.45:
        path = rng.choice(ATTR_VOCAB)
        kind = rng.random()
        if kind < 0.15:
            return Exists(path)
        if kind < 0.3 and allow_not:
            return Missing(path)
        op = rng.choice(["=", "!=", "<", "<=", ">", ">=", "CONTAINS"])
        if op == "CONTAINS":
            return Comparison(path, op, rng.choice(["ie", "GE", "ax", "z"]))
        if op in ("<", "<=", ">", ">="):
            literal = rng.choice([0, 1, 2.5, 10, -3.5])
        else:
            literal = rng.choice([0, 1, 2.5, True, False] + TEXT_POOL)
        return Comparison(path, op, literal)
    if allow_not and roll < 0.6:
        return Not(random_predicate(rng, depth - 1, allow_not))
    items = tuple(random_predicate(rng, depth - 1, allow_not)
                  for _ in range(rng.randint(2, 3)))
    return And(items) if roll < 0.8 else Or(items)


def render_predicate(pred) -> str:
    """Render an AST back to DSL text (always fully parenthesized)."""
    if isinstance(pred, Comparison):
        lit = pred.literal
        if isinstance(lit, bool):
            text = "true" if lit else "false"
        elif isinstance(lit, str):
            text = '"' + lit.replace("\\", "\\\\").replace('"', '\\"') + '"'
        else:
            text = repr(lit)
        op = f" {pred.op} " if pred.op != "CONTAINS" else " CONTAINS "
        return f"{pred.path}{op}{text}"
    if isinstance(pred, Exists):
        return f"EXISTS {pred.path}"
    if isinstance(pred, Missing):
        return f"MISSING {pred.path}"
    if isinstance(pred, Not):
        return f"NOT ({render_predicate(pred.item)})"
    joiner = " AND " if isinstance(pred, And) else " OR "
    return "(" + joiner.join(render_predicate(p) for p in pred.items) + ")"


def random_attributes(rng: Random) -> dict:
    attrs = {}
    for name in ATTR_VOCAB:
        roll = rng.random()
        if roll < 0.25:
            continue  # absent
        if roll < 0.35:
            attrs[name] = MISSING
        elif roll < 0.55:
            attrs[name] = rng.choice(TEXT_POOL)
        elif roll < 0.75:
            attrs[name] = rng.randint(-5, 15)
        elif roll < 0.9:
            attrs[name] = round(rng.uniform(-5, 15), 3)
        else:
            attrs[name] = rng.random() < 0.5
    return attrs


# -- minimal dependency-closed rule sets (exhaustive search) ---------------------


def type_closure(available: set[str], subset_rules: dict[str, tuple[list[str], list[str]]]):
    """Types reachable by repeatedly applying rules whose inputs are available."""
    avail = set(available)
    changed = True
    while changed:
        changed = False
        for rid, (ins, outs) in subset_rules.items():
            if all(i in avail for i in ins) and not set(outs) <= avail:
                avail |= set(outs)
                changed = True
    return avail


def minimal_satisfying_sets(rules: dict[str, tuple[list[str], list[str]]],
                            available_types: set[str], target: str) -> list[frozenset]:
    """All inclusion-minimal rule subsets whose closure reaches the target."""
    rule_ids = sorted(rules)
    satisfying = []
    for r in range(len(rule_ids) + 1):
        for combo in itertools.combinations(rule_ids, r):
            subset = {rid: rules[rid] for rid in combo}
            if target in type_closure(available_types, subset):
                satisfying.append(frozenset(combo))
    minimal = [s for s in satisfying
               if not any(other < s for other in satisfying)]
    return minimal


# -- graph reachability -----------------------------------------------------------


def descendants(edges: list[tuple[str, str]], roots: set[str]) -> set[str]:
    """Plain BFS over (producer, consumer) pairs."""
    adj: dict[str, list[str]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
    seen = set()
    frontier = list(roots)
    while frontier:
        node = frontier.pop()
        for nxt in adj.get(node, []):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen
