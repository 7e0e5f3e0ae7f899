"""cti-forge: automated CTI report generation and evaluation toolkit."""

__version__ = "0.1.0"
