"""Explicit-state model checker and discrete-event simulator for multi-robot
grid navigation: occupancy-grid worlds, timed-actor robots with LIDAR-style
sensing and human-like congestion resolution, verified for collision freedom,
reachability, deadlock freedom, and bounded rerouting."""

__version__ = "0.1.0"
