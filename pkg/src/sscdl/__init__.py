"""Semi-supervised confidence distribution learning for uncertain knowledge graphs."""

__version__ = "0.1.0"
