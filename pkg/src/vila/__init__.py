"""Layout-group-aware token classification: indicator tokens and hierarchical group encoding."""

__version__ = "0.1.0"
