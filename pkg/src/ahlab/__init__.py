"""Numerical laboratory for asymptotically hyperbolic resolvents and radiation fields."""
__version__ = "0.1.0"
