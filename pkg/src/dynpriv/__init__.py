"""dynpriv: consensus-based distributed solvers, their privacy mechanisms, and attacks on them."""

__version__ = "0.1.0"
