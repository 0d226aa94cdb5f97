"""Contextual-frequency encoding of NetFlow features and state-machine anomaly detection."""

__version__ = "0.1.0"
