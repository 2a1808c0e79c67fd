"""Traffic speed prediction on road graphs with heterogeneous sampling frequency."""

__version__ = "0.1.0"
