"""Adaptive trajectory tracking for small car-like vehicles.

Vehicle simulation with injectable model mismatch, sparse Gaussian-process
residual learning with online updates, LPV-LQR state-feedback synthesis,
GP-based compensation, active-learning experiment design, and
counterexample-guided induced-L2-gain certification of the closed loops.
"""

__version__ = "0.1.0"
