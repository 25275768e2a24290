"""Individual claims reserving with neural networks on simulated transaction histories."""

__version__ = "0.1.0"
