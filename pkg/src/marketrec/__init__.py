"""Market-aware neural recommenders for cross-market recommendation.

Subpackages: :mod:`marketrec.nn` (autodiff and Adam), :mod:`marketrec.data`
(ingestion, splits, negatives), :mod:`marketrec.experiments` (experiment
matrix and CLI).  Models, training and evaluation live in top-level modules.
"""

__version__ = "0.1.0"
