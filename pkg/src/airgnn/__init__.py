"""Over-the-air spatio-temporal GNNs for mmWave blockage prediction."""

__version__ = "0.1.0"
