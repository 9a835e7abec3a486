"""Arbitrary-order dual cell method for 3D time-domain Maxwell on tetrahedral meshes."""

__version__ = "0.1.0"
