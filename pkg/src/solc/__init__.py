"""Self-organizing logic circuits built from memristive gates."""
__version__ = "0.1.0"
