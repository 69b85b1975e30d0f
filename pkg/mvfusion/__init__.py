"""Multi-agent class subspace learning with per-class basis fusion."""
__version__ = "1.0.0"
