"""Vector-Lyapunov comparison systems and energy-flow decomposition of
polynomial dynamical networks."""

__version__ = "0.1.0"
