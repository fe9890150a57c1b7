"""Opportunistic spectrum access simulator.

Markov channel occupancy, imperfect sensing, belief-state sensing
strategies, collision-constrained access, spatial sharing by list-coloring
and a priority rule engine for regulatory policy.
"""

__version__ = "0.1.0"
