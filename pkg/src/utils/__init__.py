"""
Utilities package for dgtta.

Contains:
- Report generation: scoring, summaries, significance, markdown export
- Visualization: score box plots and loss-trace plots
"""
