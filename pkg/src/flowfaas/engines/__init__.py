"""Compute and communication engines."""
