"""Paired DNA + epigenetic-state masked language model and TF-binding pipeline."""

__version__ = "0.1.0"
