"""Accuracy-based fairness auditing: metrics, bias-variance decomposition,
DEO-regularised training, g-SMOTE augmentation and adaptive sampling."""

__version__ = "0.1.0"
