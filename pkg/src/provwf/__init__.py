"""provwf: provenance-first workflow engine.

Plans are assembled from a declarative rule catalog against the current
artifact state, sealed by explicit approval, executed as deterministic DAGs
with automatic provenance, and interrogated through a grounded query DSL.
"""

__version__ = "0.1.0"

from .contract import Artifact, ProvenanceRecord, Registry  # noqa: F401
from .errors import ProvwfError  # noqa: F401
