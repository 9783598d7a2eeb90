"""Fractional torsion, Steiner symmetrization and shape derivatives on convex domains."""

__version__ = "0.1.0"
