"""
Three-party secure inference engine.

- sharing: replicated secret sharing over the 64-bit ring
- network: party sessions, framing and communication accounting
- protocols: multiplication, truncation, comparison and approximations
- nn: transformer kernels, secure forward pass and generation
"""
