"""Learning uncertain constraints from demonstrations and planning under them."""

__version__ = "0.1.0"
