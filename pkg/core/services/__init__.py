"""Domain services: MIDI codec, piano rolls, datasets, the transfer model and its training."""

__all__ = []
