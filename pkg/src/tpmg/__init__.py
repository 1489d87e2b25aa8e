"""Tensor-product multigrid preconditioning for implicit gravity-wave systems."""

__version__ = "0.1.0"
