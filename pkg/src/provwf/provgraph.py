"""Walks over the provenance edges recorded in a registry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .contract import Registry


@dataclass(frozen=True)
class ProvenanceHop:
    """One upstream step: the artifact plus the rule application behind it."""

    artifact_id: str
    artifact_type: str
    rule_id: str
    param_binding: dict[str, Any]
    input_ids: tuple[str, ...]


def provenance_of(art_id: str, registry: Registry) -> list[ProvenanceHop]:
    """Full upstream chain of an artifact, deduplicated, breadth-first.

    Each hop carries the producing rule and its bound parameters; the chain
    terminates at ROOT artifacts, which contribute no hop of their own. A
    ROOT artifact therefore yields an empty chain.
    """
    start = registry.get(art_id)
    chain: list[ProvenanceHop] = []
    seen: set[str] = set()
    frontier = [start]
    while frontier:
        next_frontier = []
        for artifact in frontier:
            prov = artifact.provenance
            if prov.kind != "DERIVED":
                continue
            if artifact.id in seen:
                continue
            seen.add(artifact.id)
            chain.append(
                ProvenanceHop(
                    artifact_id=artifact.id,
                    artifact_type=artifact.artifact_type,
                    rule_id=prov.rule_id,
                    param_binding=dict(prov.param_binding),
                    input_ids=prov.input_ids,
                )
            )
            next_frontier.extend(registry.get(i) for i in sorted(prov.input_ids))
        frontier = next_frontier
    return chain


def dependents_of(art_id: str, registry: Registry) -> list[str]:
    """All artifact ids whose provenance chain contains art_id (downstream)."""
    registry.get(art_id)  # raises NotFound for unknown ids
    reached = {art_id}
    out = []
    for artifact in registry:  # registration order is topological
        if artifact.id in reached:
            continue
        if any(i in reached for i in artifact.provenance.input_ids):
            reached.add(artifact.id)
            out.append(artifact.id)
    return out


def rule_sequence(chain: list[ProvenanceHop]) -> list[str]:
    """Producing rules in execution order (upstream first), deduplicated."""
    ordered: list[str] = []
    for hop in reversed(chain):
        if hop.rule_id not in ordered:
            ordered.append(hop.rule_id)
    return ordered
