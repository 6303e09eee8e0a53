"""Publication-style figures from torusflow output files.

This package reads only the published CSV/JSONL schemas; it never recomputes
physics, so the simulation outputs stay the single source of truth.
"""

__version__ = "0.1.0"
