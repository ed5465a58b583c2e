"""Desk-scale byte-to-spectrogram multilingual TTS training framework."""

__version__ = "0.1.0"
