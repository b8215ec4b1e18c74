"""
Test package for the segmentation network, inference and checkpoints.
"""
