"""Keeps the tests directory importable so shared oracle helpers resolve."""
