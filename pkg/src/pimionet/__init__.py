"""Moving-load structural dynamics, operator-network surrogates and Schur reconstruction."""

__version__ = "0.1.0"
