"""Multi-task product ranking with DCN-V2 / FT-Transformer bottoms, MMoE heads and text matching."""

__version__ = "0.1.0"
