"""gameforge: a multi-agent game-development pipeline with a deterministic
mock engine, review loops, and an operator console API."""

__version__ = "0.1.0"
