"""
Workflows package for the evaluation routines.

This package contains the workflows that drive the engine end to end:
- Bench workflow (encrypted inference cost versus swarm size)
- Scenario workflow (sensor reports to commands to simulated flight)
- Approximation workflow (accuracy and cost of the secure nonlinearities)
- Evaluation workflow (command similarity against a sensor/command dataset)
"""

__version__ = "1.0.0"
