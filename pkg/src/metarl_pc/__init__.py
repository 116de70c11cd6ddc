"""Meta-reinforcement learning for SISO setpoint-tracking control."""

__version__ = "0.1.0"
