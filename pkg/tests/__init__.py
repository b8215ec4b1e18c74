"""
Test package for dgtta.

Contains the test suite for:
- Data, config and manifest models
- Numerical tools (IO, descriptor, augmentation, metrics, statistics, phantoms)
- Network, training and adaptation components
- Reporting, CLI and end-to-end scenario runs
"""
