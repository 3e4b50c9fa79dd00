"""longhaul: a durable plan-and-execute orchestration engine for
long-horizon autonomous projects."""

__version__ = "0.1.0"
