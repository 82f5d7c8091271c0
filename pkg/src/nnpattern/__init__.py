"""Simulate how PRBS and repeated patterns inflate neural-receiver BER gains."""

__version__ = "0.1.0"
