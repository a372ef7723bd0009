"""Superclass adversarial attacks on small differentiable classifiers."""

from .attacks import (
    ALL,
    AttackConfig,
    AttackOutcome,
    is_superclass_adversarial,
    iterative_attack,
    non_iterative_attack,
    pgd,
    project_linf,
    standard_attack,
)
from .diffmodel import Classifier, Linear, ReLU, forward, input_gradient, logsumexp, softmax
from .losses import LossSpec, list_legal_rows, standard_loss, superclass_loss, targeted_loss
from .taxonomy import Taxonomy, argmax_in, complement_of, load_taxonomy, superclass_of, top_k_in

__version__ = "0.1.0"
