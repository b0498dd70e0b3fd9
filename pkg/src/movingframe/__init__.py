"""Moving-frame solvers for rough and stochastic PDEs on finite-dimensional discretizations."""

__version__ = "0.1.0"
