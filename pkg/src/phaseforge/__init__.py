"""Surgical phase recognition with self-supervised pre-training of encoder-LSTM networks."""

__version__ = "0.1.0"
