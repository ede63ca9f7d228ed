"""Sub-symbol beam-switching ISAC simulation toolkit."""

__version__ = "0.1.0"
