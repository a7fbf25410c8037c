"""Multi-view encoder / hierarchical attention-decoder report generation at desk scale."""

__version__ = "0.1.0"
