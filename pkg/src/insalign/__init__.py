"""Strapdown INS initial alignment: constructive observers and an error-state EKF."""

__version__ = "0.1.0"
