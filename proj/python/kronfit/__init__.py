"""Kronecker-product correlation models for doubly repeated measures.

Reports come back as plain dictionaries with the same layout as the JSON
reports of the ``kronfit`` command-line tool.
"""

import json

from ._core import (
    Dataset,
    InputError,
    KronfitError,
    lear_correlation,
    load_dataset as _load_dataset,
    profile_loglik,
)
from . import _core

__all__ = [
    "Dataset",
    "InputError",
    "KronfitError",
    "fit",
    "lear_correlation",
    "load_dataset",
    "profile_loglik",
    "select",
    "simulate",
    "surface",
    "validate",
]


def _dump(config):
    return "" if config is None else json.dumps(config)


def load_dataset(path, config=None):
    """Reads a long-format CSV; ``config`` is a dict shaped like a config file."""
    return _load_dataset(str(path), _dump(config))


def simulate(design, seed=None):
    """Draws a dataset from a design dict (the ``simulate`` section of a config)."""
    return _core.simulate(json.dumps(design), seed)


def fit(dataset, factor1="lear", factor2="lear", config=None):
    """Fits one structure; factors are ``family[:params]`` with LEAR decay scaled."""
    return json.loads(_core.fit_json(dataset, factor1, factor2, _dump(config)))


def select(dataset, families1="lear,de,ar1", families2="lear,de,ar1", backward=False, alpha=0.20, threads=1,
           config=None):
    return json.loads(_core.select_json(dataset, families1, families2, backward, alpha, threads, _dump(config)))


def validate(dataset):
    return json.loads(_core.validate_json(dataset))


def surface(factor1, factor2, range1, range2, steps=11):
    return json.loads(_core.surface_json(factor1, factor2, tuple(range1), tuple(range2), steps))
