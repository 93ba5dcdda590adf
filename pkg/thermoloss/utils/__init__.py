"""
Utility package for the thermoloss toolkit.
"""
