"""Cooperative multistatic target localization over rate-limited backhaul links."""

__version__ = "0.1.0"
