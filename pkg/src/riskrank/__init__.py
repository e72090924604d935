"""Misprediction risk analysis for multiclass classifiers.

Pipeline: interpretable risk features over fused embeddings -> one-sided
threshold rules -> attention-based risk model with truncated-normal VaR
scoring -> pairwise learning-to-rank training -> risk-guided adaptive
fine-tuning of a linear classifier head.
"""

__version__ = "0.1.0"
