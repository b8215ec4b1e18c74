"""
Test package for run-config loading.
"""
