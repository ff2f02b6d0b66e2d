"""Evolves heuristic programs with an LLM in a (1+1) loop, tuning each
candidate's hyper-parameters on training instances before scoring it on the
full benchmark."""

__version__ = "0.1.0"
