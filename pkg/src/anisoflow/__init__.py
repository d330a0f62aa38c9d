"""Anisotropic mean curvature flow of periodic graphs and its gradient estimates.

Modules: ``integrand`` (area integrands and their level-set geometry),
``constants`` (sampled extremal constants and barrier parameters),
``solver`` (explicit finite-difference flow), ``estimates`` (barrier
bounds and their verification) and ``cli``.
"""

__version__ = "0.1.0"
