"""Offline-first driving telemetry analysis and feedback generation."""

__version__ = "0.1.0"
