"""Cross-domain sequential recommender with multimodal embedding fusion."""

__version__ = "0.1.0"
