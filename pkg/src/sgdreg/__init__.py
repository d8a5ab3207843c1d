"""Simulation and theory toolkit for the three dynamical regimes of
minibatch SGD on a hinge-loss perceptron with one informative direction.
"""

__version__ = "0.1.0"

from .distribution import DataDistribution, Dataset, generate_dataset, load_dataset
from .perceptron import ModelParams, Observables, PerceptronState, RunRecord, train
from .theory import AsymptoticConstants, ReducedCoords, TheoryEvaluation

__all__ = [
    "DataDistribution", "Dataset", "generate_dataset", "load_dataset",
    "ModelParams", "Observables", "PerceptronState", "RunRecord", "train",
    "AsymptoticConstants", "ReducedCoords", "TheoryEvaluation",
    "__version__",
]
