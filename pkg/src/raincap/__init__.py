"""Heavy-rain image captioning with feature-matched encoders."""
__version__ = "0.1.0"
