"""Koopman obstacle forecasting inside a distributed switched MPC for UAV teams."""

__version__ = "0.1.0"
