"""Link-level traffic GHG emission synthesis and next-interval prediction."""

__version__ = "0.1.0"
