"""verbkit: knowledge-enriched weighted verbalizers for prompt classification."""

__version__ = "0.1.0"
