"""Constrained adversarial examples for tabular models.

Gradient (C-PGD) and multi-objective evolutionary (MoEvA2-style) attacks over
a constraint DSL, plus adversarial retraining and engineered-constraint
augmentation defenses.
"""

__version__ = "0.1.0"
