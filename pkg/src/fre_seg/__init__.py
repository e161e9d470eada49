"""FRE-Seg - U-Net training toolkit with Feature Random Enhancement."""

__version__ = "0.1.0"
