"""Random metastable interval maps: open transfer operators, jump statistics and diffusion."""

__version__ = "0.1.0"
