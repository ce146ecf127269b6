"""Contrastive ECG representation learning under five positive-pair strategies."""

__version__ = "0.1.0"
