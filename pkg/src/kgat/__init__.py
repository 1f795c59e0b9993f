"""kgat: knowledge-graph-fused text classification with bias tooling."""

__version__ = "0.1.0"
