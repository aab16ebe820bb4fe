"""Counter-based side-channel detection pipeline and multi-core scheduler simulator."""

__version__ = "0.1.0"
