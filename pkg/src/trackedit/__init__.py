"""Motion editing for videos represented as 3D point tracks."""

__version__ = "0.1.0"
