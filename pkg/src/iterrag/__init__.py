"""Multi-hop QA evaluation under no-context, gold-context and iterative RAG regimes."""

__version__ = "0.1.0"
