"""Runtime for declarative worksheet-driven task assistants."""

__version__ = "0.1.0"
