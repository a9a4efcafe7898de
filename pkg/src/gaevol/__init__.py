"""Graph auto-encoder market-instability indicator and HAR volatility forecasting."""

__version__ = "0.1.0"
