"""
Tools package for dgtta.

Contains the numerical building blocks:
- Volume IO: raw .bin/.meta and NIfTI reading/writing, resampling
- SSC descriptor: 12-channel self-similarity context features
- GIN: random shallow-network intensity augmentation
- Spatial augmentation: random affine transforms, warps and validity masks
- Metrics: Dice and HD95 surface distances
- Statistics: exact one-sided Wilcoxon signed-rank test
- Phantom generator and dataset directory IO
"""
