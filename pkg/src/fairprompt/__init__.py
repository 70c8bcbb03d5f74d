"""Causal checks and prompting-based debiasing evaluation for LLM decisions."""
__version__ = "0.1.0"
