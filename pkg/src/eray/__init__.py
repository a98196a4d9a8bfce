"""Local ray transform for general flows: tracing, normal operators,
boundary-symbol ellipticity checks and desk-scale inversion."""

__version__ = "0.1.0"
