"""Plaintext reference: float and fixed-point oracles for the secure kernels."""
