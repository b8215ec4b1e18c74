"""
Adaptation package for dgtta.

Contains the test-time adaptation methods:
- BaseAdapter: shared source-free optimization loop
- ConsistencyAdapter: two affine views, masked consistency Dice
- TentAdapter: entropy minimization on normalization parameters
- TTAEnsemble and ensemble_predict: averaged softmax of adapted members
"""
