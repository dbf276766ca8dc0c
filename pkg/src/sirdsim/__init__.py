"""Deterministic packet-level simulator of a credit-based receiver-driven transport."""

__version__ = "0.1.0"
