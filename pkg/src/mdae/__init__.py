"""Restart systems for multimode DAE models."""
