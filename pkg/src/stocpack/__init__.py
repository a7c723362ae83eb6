"""stocpack: LP rounding pipelines for correlated stochastic knapsack and
non-martingale bandits, exact DP oracles, and a Monte Carlo certification
harness."""

__version__ = "0.1.0"
