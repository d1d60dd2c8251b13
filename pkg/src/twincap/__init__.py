"""Twin cascaded-attention caption decoder with visual grounding."""

__version__ = "0.1.0"
