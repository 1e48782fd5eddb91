"""Two-phase drift diffusions: analytics, regeneration chains and simulation."""

__version__ = "0.1.0"
