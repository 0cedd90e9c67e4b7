"""Energy-efficient FL rounds over a massive-MIMO cell: models, SCA solvers, heuristics."""

__version__ = "0.1.0"
