"""Rater-proficiency measurement for audio-description quality assessment."""

__version__ = "0.1.0"
