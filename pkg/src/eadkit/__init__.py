"""Energy activity dataset toolkit."""

__version__ = "0.1.0"
