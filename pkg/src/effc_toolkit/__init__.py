"""
Fast Fragmentation-Coalescence Toolkit
Exact formulas, simulation and estimators for the block-counting process
"""

__version__ = "0.1.0"
