"""Explicit ReLU network constructions for functions with mixed smoothness."""
