"""Single-image to 3D Gaussian head pipeline at desk scale."""

__version__ = "0.1.0"
