"""Variable-scaling physics-informed neural networks with NTK trace analysis."""

__version__ = "0.1.0"
