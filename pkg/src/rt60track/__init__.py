"""Blind tracking of reverberation time from reverberant speech."""

__version__ = "0.1.0"
