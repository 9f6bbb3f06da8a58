"""Discrete time-frequency model of the polynomial Carleson operator.

Modules: ``dyadic`` (interval arithmetic and node points), ``polyalg`` (exact
polynomial tools and growth oracles), ``tiles`` (tiles and their order
relations), ``critical`` (critical sets and Whitney partitions), ``carleson``
(kernel, tile operators, phase assignments), ``forest`` (mass levels, trees,
forests and rows), ``harness`` and ``cli`` (verification suites).
"""

__version__ = "0.1.0"
