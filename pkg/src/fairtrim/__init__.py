"""Correlation-aware feature elimination for gradient-boosted risk models.

Modules
-------
dataset  chronon tables, partitioning and temporal weights
gbt      second-order boosted trees for weighted logistic loss
metrics  AUC with bootstrap intervals, Spearman correlation
debias   bias score, static cutoff and the eliminate-and-retrain loop
synth    synthetic city generator with planted ground truth
report   trace tables and summaries
cli      command-line driver
"""
__version__ = "0.1.0"
