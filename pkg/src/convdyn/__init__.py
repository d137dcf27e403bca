"""Markov jump process models of small-group conversational dynamics."""

__version__ = "0.1.0"
