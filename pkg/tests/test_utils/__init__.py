"""
Test package for utility functions.
"""