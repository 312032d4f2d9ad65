"""Continuous-time Bayesian networks for prognostics and health management.

Diagnostic models are derived from D-matrices and reliability data, hazard
models from AND/OR fault trees.  The two merge over their shared faults,
decision vertices encode scenarios, and exact or Monte Carlo inference
scores the scenarios on user-defined performance functions.
"""
__version__ = "0.1.0"
