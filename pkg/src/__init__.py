"""
Robust Polynomial Optimization Package

This package provides two-stage adjustable robust polynomial optimization
(alternating projections on conic counterparts, posterior Putinar checks)
and its robust AC optimal power flow application on MATPOWER cases.
"""
