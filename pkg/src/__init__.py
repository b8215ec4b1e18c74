"""
dgtta: domain-generalized pre-training and test-time adaptation

Patch-based 3D segmentation networks pre-trained with GIN intensity
augmentation and SSC descriptor input, then adapted to single unseen
target volumes through augmentation-consistency optimization.
"""

__version__ = "0.1.0"
