"""Point-cloud normal estimation with Chamfer Normal Distance."""

__version__ = "0.1.0"
