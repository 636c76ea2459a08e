"""Dependency-aware cause/effect phrase tagger, trained from scratch on CPU."""

__version__ = "0.1.0"
