"""
thermoloss: identification of temperature-power dynamics and power-loss estimation.
"""
