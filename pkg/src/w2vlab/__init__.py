"""Weather-to-voltage surrogate modelling and grid-aware weather forecasting."""
__version__ = "0.1.0"
