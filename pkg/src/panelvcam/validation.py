"""Input coercion and validation helpers for the estimator front end."""
from __future__ import annotations

import os

import pandas as pd

from .data import PanelDataset
from .exceptions import DataError


def as_panel_dataset(obj) -> PanelDataset:
    """Coerce a PanelDataset, long-form DataFrame or CSV path to a dataset."""
    if isinstance(obj, PanelDataset):
        return obj
    if isinstance(obj, pd.DataFrame):
        return PanelDataset.from_frame(obj)
    if isinstance(obj, (str, os.PathLike)):
        return PanelDataset.from_csv(obj)
    raise DataError(
        f"cannot interpret {type(obj).__name__!r} as panel data; expected a "
        "PanelDataset, a long-form DataFrame or a CSV path"
    )


def check_positive_int(name: str, value, minimum: int = 1) -> int:
    from .exceptions import ConfigurationError

    if value is None:
        raise ConfigurationError(f"{name} must be set")
    if int(value) != value or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
