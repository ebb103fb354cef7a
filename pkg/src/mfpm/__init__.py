"""mfpm: a miniature functional package manager with a reproducibility audit."""

__version__ = "0.1.0"
