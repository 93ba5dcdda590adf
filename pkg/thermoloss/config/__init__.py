"""
Configuration package for the thermoloss toolkit.
"""
