"""
Tests package
"""

