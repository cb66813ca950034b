"""Multi-task affect recognition toolkit: losses, metrics, preprocessing,
toy networks on a differentiation tape, and annotation tooling."""

__version__ = "0.1.0"
