"""
Test package for model validation and functionality.
"""