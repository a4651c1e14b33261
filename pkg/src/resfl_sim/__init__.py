"""Desk-scale federated learning simulator.

Evidential uncertainty estimation, uncertainty-fairness-weighted
aggregation, gradient-reversal adversarial privacy, baseline aggregators
(FedAvg, FedAvg-DP), a four-attack harness, and a fairness/privacy
metric suite over synthetic group-structured classification data.
"""

__version__ = "0.1.0"
