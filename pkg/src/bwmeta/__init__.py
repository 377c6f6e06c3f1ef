"""Wavelet-domain LSTM metamodels with MC-dropout uncertainty for stochastic Bouc-Wen buildings."""

__version__ = "0.1.0"
