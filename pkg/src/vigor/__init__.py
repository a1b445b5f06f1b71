"""Order-aware 3D visual grounding on synthetic desk-scale scenes."""

__version__ = "0.1.0"
