"""Character-level transformer pipeline for DNS exfiltration detection."""

__version__ = "0.1.0"
