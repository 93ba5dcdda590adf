"""
Numerical components of the thermoloss toolkit: dataset, identify, estimate,
synth, and the pipeline commands built on them.
"""
