"""Hybrid recommender: semantic profiles, graph-attention CF, LLM reranking."""

__version__ = "0.1.0"
