"""Vector-augmented query optimization: estimators, planner, executor and benchmark."""

__version__ = "0.1.0"
