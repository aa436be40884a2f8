"""Causal bandits over known DAGs with general SCM classes and soft interventions."""

from .graph import Dag, compute_stats, hierarchical_graph, validate_and_order
from .scm import (
    BINARY,
    GaussianNoise,
    InterventionSpace,
    LinearClass,
    NeuralNetClass,
    NodeFunction,
    PolynomialClass,
    RademacherNoise,
    Scm,
    ShiftedBernoulliNoise,
    ZeroNoise,
    evaluate,
    expected_reward,
    oracle_best_intervention,
    sample_system,
)

__version__ = "0.1.0"
