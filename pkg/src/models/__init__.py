"""
Data models package for dgtta.

Contains Pydantic models for:
- Volumes, label maps and datasets
- Component configurations (descriptor, augmentation, network, optimization)
- Checkpoint/run manifests and score tables
"""
