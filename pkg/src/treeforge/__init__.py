"""Tree ensembles with sparse-aware split search, output projections and L1 compression."""

__version__ = "0.1.0"
