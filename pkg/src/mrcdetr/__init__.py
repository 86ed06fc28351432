"""Desk-scale detector building blocks for bare-board PCB defect detection."""

__version__ = "0.1.0"
