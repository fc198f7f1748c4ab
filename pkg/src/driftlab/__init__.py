"""Numerical laboratory for second-order elliptic operators in divergence
form with rough drift and zero-order terms: meshes, coefficient-class
measurements, level-set splittings, Dirichlet and obstacle solves, capacity
and boundary-regularity functionals, and approximate Green functions, each
paired with checks that measure the constants in the underlying estimates.
"""

__all__ = ["__version__"]

__version__ = "0.1.0"
