"""Counterfactual collaborative session-based recommendation.

Subpackages/modules:
  core            domain types (interactions, sessions, prediction events)
  ingest          log parsing, filtering, sessionization, CV folds, snapshots
  numerics        attention + backward, gradient checker, Adam, Xavier init
  kernels         hot per-event kernels (numba with a pure-numpy fallback)
  brm             base recommendation model and its training loop
  counterfactual  neighbor retrieval, action/aggregate/boost inference
  evaluate        recall/NDCG, SKNN baseline, cross-validation driver
  synth           synthetic data with planted causes, gate AUC
  cli             command-line interface
"""

__version__ = "0.1.0"
