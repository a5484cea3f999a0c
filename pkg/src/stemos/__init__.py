"""Shared spatio-temporal-embodiment memory and a multi-robot orchestration simulator."""

__version__ = "0.1.0"
