"""Masked-imputation pre-training of graph transformers on patient population graphs."""

__version__ = "0.1.0"
