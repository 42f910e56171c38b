"""tracklab: correlation-filter and dense structured-SVM style trackers.

Solvers for masked multi-channel correlation filters, spatially regularized
single-frame filters and a dense square-loss tracker of the Struck family,
plus the shared DSP/feature/label machinery, a sequence tracking pipeline,
an OTB-style evaluation harness and a relation verification suite.
"""

__version__ = "0.1.0"
