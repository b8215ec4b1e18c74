"""
Training package for dgtta.

Contains:
- Losses: supervised CE + Dice, masked consistency Dice, entropy
- InputPipeline: plain / GIN / SSC / GIN+SSC network inputs
- Patch sampling with foreground oversampling
- pretrain: domain-generalized supervised pre-training
"""
