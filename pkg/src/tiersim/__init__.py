"""tiersim: deterministic trace-driven simulator for multi-tiered page management."""

__version__ = "0.1.0"
