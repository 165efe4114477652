"""Dynamic dependency network models with goal-directed adaptive variable selection."""

__version__ = "0.1.0"
