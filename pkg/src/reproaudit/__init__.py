"""Reproducibility-audit harness.

Executes code projects in isolated clean environments, discovers the gap
between declared and actually required dependencies through iterative
resolution, captures the full runtime dependency closure, and aggregates
executable-reliability metrics over single projects and corpora.
"""

__version__ = "0.1.0"
