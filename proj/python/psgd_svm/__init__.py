"""Data-parallel SGD linear SVM with configurable model-synchronization frequency."""

from ._psgd import (
    CommError,
    DataError,
    Dataset,
    InvalidArgumentError,
    ParseError,
    PsgdError,
    TrainingAbort,
    accuracy,
    allreduce,
    average_models,
    gaussian_init,
    hinge,
    learning_rate,
    load_libsvm,
    load_model,
    make_synthetic,
    objective,
    parse_libsvm,
    partition_indices,
    save_model,
    sgd_step,
    shuffled_indices,
    split,
    subgradient,
    train,
)

__all__ = [
    "CommError",
    "DataError",
    "Dataset",
    "InvalidArgumentError",
    "ParseError",
    "PsgdError",
    "TrainingAbort",
    "accuracy",
    "allreduce",
    "average_models",
    "gaussian_init",
    "hinge",
    "learning_rate",
    "load_libsvm",
    "load_model",
    "make_synthetic",
    "objective",
    "parse_libsvm",
    "partition_indices",
    "save_model",
    "sgd_step",
    "shuffled_indices",
    "split",
    "subgradient",
    "train",
]
