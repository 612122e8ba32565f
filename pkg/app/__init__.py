"""Secure swarm-command engine: three-party encrypted transformer inference for UAV swarm control."""

__version__ = "0.1.0"
