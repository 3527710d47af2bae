"""fwlab: small random perturbations of dynamical systems, numerically."""

__version__ = "0.1.0"
