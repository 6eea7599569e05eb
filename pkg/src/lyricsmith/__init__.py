"""Syllable-controlled, song-form-aware lyrics generation and infilling."""

__version__ = "0.1.0"
