"""Cycle-level simulator and toolchain for a bank-level processing-in-memory system."""

__version__ = "0.1.0"
