"""Byte cursors, atomic file writes and key=value text."""
