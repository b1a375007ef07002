"""Classical measurement trajectories of a cavity-monitored 1D Bose gas."""

__version__ = "0.1.0"
