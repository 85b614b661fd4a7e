"""MARS: multi-party ad hoc teamwork via agent modeling, sparse agent
skeletons, relational message passing, and independent PPO."""

__version__ = "0.1.0"
