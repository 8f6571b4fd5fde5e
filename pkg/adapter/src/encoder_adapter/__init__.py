"""Offline encoder adapter: turns item metadata (plus optional images and
LLM enrichment) into the engine's frozen embedding files."""

__version__ = "0.1.0"


class AdapterError(Exception):
    """Raised for unusable inputs or backend failures."""
