"""
Test package for losses, input pipelines and pre-training.
"""
