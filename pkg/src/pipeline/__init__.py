"""
Pipeline package for dgtta.

Contains the end-to-end scenario runner (generate, pre-train, predict,
adapt, evaluate, report) and run-manifest provenance helpers.
"""
