"""Open-set speaker identification (watchlist detection) evaluation toolkit."""

__version__ = "0.1.0"
