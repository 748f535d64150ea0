"""Joint demosaicing and super-resolution of Bayer CFA images on a small numpy autodiff core."""

__version__ = "0.1.0"
