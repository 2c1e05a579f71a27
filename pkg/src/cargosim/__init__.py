"""Deterministic round-based simulator for carbon-aware gossip learning
over trace-driven vessel contact graphs, with decentralized baselines and
full energy/carbon/communication accounting."""

__version__ = "0.1.0"
