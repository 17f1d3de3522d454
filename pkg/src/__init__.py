"""
GSCodec - Gaussian Splat compression codec
"""

__version__ = "0.1.0"
