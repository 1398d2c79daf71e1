"""Text-aware image captioning with OCR-confidence embeddings and repetition-masked pointer decoding."""

__version__ = "0.1.0"
