"""
asdkit: simulation, mean-field analysis and approximation bounds for
asynchronous semi-anonymous dynamics on directed labelled graphs.
"""

__version__ = "0.1.0"
