"""Framework-free continuous sign language recognition with time and frequency branches."""

__version__ = "0.1.0"
