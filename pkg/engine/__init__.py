"""Numerical core of the stochastic chemotaxis simulator"""

__version__ = "0.1.0"
