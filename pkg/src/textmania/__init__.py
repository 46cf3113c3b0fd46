"""Text-driven feature augmentation with attribute difference vectors."""

__version__ = "0.1.0"
