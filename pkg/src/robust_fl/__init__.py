"""Byzantine-robust aggregation (Mean, Krum, Multi-Krum, rKrum, ArKrum) and a federated-learning simulator."""

__version__ = "0.2.0"
