"""Dictionary-prior test-time adaptation for TEM signal denoising."""

__version__ = "0.1.0"
