"""Earnings-direction classification pipeline.

Panel ingestion, feature engineering, PCA reduction, leaf-wise histogram
gradient boosting, hyperparameter search, and a rolling walk-forward
backtest with consensus-conditional scoring.
"""

__version__ = "0.1.0"
