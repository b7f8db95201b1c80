"""Feature-combination selection for embedding + MLP click models."""

__version__ = "0.1.0"
