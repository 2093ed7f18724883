"""Numerical controllability of coupled degenerate parabolic systems.

Modules: model (problem data), spectral (graded-mesh eigenbasis), algebra
(rank condition), dynamics (modal solvers), hum (penalized controls),
carleman (weight functions), semilinear (fixed-point control), cli.
"""

__version__ = "0.1.0"
