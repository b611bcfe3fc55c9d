"""Model-agnostic ESI triage decision support and evaluation harness."""

__version__ = "0.1.0"
