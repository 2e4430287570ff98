"""Agent-based simulator of preference-driven bots on a directed microblogging platform."""

__version__ = "0.1.0"
