"""anisoflow: numerical laboratory for flows of vector fields with split anisotropic regularity."""

__version__ = "0.1.0"
