"""
Configuration package for dgtta.

Contains:
- Environment settings and logging setup
- Run-config file loading (sectioned YAML)
"""
