"""Grid-world crowd navigation benchmark on replayed pedestrian trajectories."""

__version__ = "0.1.0"
