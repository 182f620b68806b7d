"""Simulated CV-QKD receiver with pilot-aided UKF carrier recovery."""

__version__ = "0.1.0"
