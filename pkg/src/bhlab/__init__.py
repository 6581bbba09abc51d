"""Two-type critical Bellman-Harris processes with a heavy-tailed type:
simulation, Volterra solvers, limit objects and the regime map."""

__version__ = "0.1.0"
