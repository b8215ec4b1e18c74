"""
Test package for test-time adaptation methods and ensembles.
"""
