"""Evaluation metrics: integrated squared error, partition NMI, rolling
out-of-sample prediction error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PanelDataset
from .exceptions import ConfigurationError, DataError
from .estimates import PairPartition


def mise(estimate, truth, eval_sample, n_grid: int = 401, trim=(0.01, 0.99)) -> float:
    """Integrated squared difference between two functions.

    Integration runs over the quantile-trimmed range of ``eval_sample``
    (trimming keeps the comparison away from poorly supported boundary
    regions); pass ``trim=None`` to use the full sample range.  Both
    arguments are called on the integration grid, so any callable works,
    including :class:`FunctionEstimate`.
    """
    sample = np.asarray(eval_sample, dtype=float)
    if sample.size == 0:
        raise DataError("eval_sample must be nonempty")
    if trim is None:
        lo, hi = float(sample.min()), float(sample.max())
    else:
        lo, hi = (float(v) for v in np.quantile(sample, trim))
    if not hi > lo:
        raise DataError("degenerate evaluation range")
    grid = np.linspace(lo, hi, n_grid)
    diff = np.asarray(estimate(grid), dtype=float) - np.asarray(truth(grid), dtype=float)
    return float(np.trapezoid(diff**2, grid))


def nmi(first: PairPartition, second: PairPartition) -> float:
    """Normalised mutual information between two partitions of one index set.

    Returns values in [0, 1]; identical partitions score 1.  When both
    partitions are the single-block partition (both entropies zero) the
    partitions are identical and the value is 1 by convention; one-sided
    degenerate cases follow the formula and score 0.
    """
    if first.universe != second.universe:
        raise DataError("partitions are over different index sets")
    n = len(first.universe)
    h_first = _entropy(first, n)
    h_second = _entropy(second, n)
    if h_first == 0.0 and h_second == 0.0:
        return 1.0
    information = 0.0
    for block_a in first.blocks:
        for block_b in second.blocks:
            overlap = len(block_a & block_b)
            if overlap == 0:
                continue
            information += (overlap / n) * np.log(
                n * overlap / (len(block_a) * len(block_b))
            )
    value = information / ((h_first + h_second) / 2.0)
    return float(min(max(value, 0.0), 1.0))


def _entropy(partition: PairPartition, n: int) -> float:
    sizes = np.array(partition.block_sizes(), dtype=float)
    shares = sizes / n
    return float(-(shares * np.log(shares)).sum())


@dataclass(frozen=True)
class NmiReport:
    """Mean and spread of NMI against the true partitions, per family.

    Keys of ``mean``/``sd`` are ``(family, variant)`` with family in
    {"coefficient", "additive"} and variant in {"greedy", "refined"}.
    """

    n_replications: int
    mean: dict
    sd: dict


@dataclass(frozen=True)
class MiseReport:
    """Mean and spread of integrated squared errors per estimated function.

    Each function's ISE is first averaged over the cluster/term pairs it
    covers within a replication, then across replications.  ``domains``
    records the average quantile-trimmed integration bounds.
    """

    n_replications: int
    mean: dict
    sd: dict
    domains: dict


@dataclass(frozen=True)
class PredictionErrorReport:
    """Rolling out-of-sample squared error, aggregated and per cluster."""

    aggregate: float
    per_cluster: dict
    per_horizon: dict
    horizon: int


def rolling_prediction_report(dataset: PanelDataset, estimator, horizon_days: int,
                              min_train: int = None) -> PredictionErrorReport:
    """Refit-and-predict over the last ``horizon_days`` terminal points.

    For each held-out day ``T - j`` (per cluster), a fresh clone of the
    estimator is fitted on all observations strictly before that day and
    the squared prediction error at the held-out day is recorded, in the
    dataset's original units.  The aggregate averages over clusters and
    horizon.
    """
    from sklearn.base import clone

    if horizon_days < 0:
        raise ConfigurationError("horizon_days must be nonnegative")
    n_lags = estimator.n_lags
    shortest = min(dataset.lengths)
    if min_train is None:
        min_train = max(3 * (n_lags + 8), 20)
    if horizon_days and shortest - horizon_days - 1 < max(min_train, n_lags + 2):
        raise DataError(
            f"insufficient history: shortest series has {shortest} points, "
            f"cannot hold out {horizon_days} days"
        )

    if horizon_days == 0:
        fitted = clone(estimator).fit(dataset)
        predictions = fitted.predict_panel(dataset)
        errors = (predictions["y"] - predictions["y_pred"]) ** 2
        per_cluster = errors.groupby(predictions["cluster_id"]).mean().to_dict()
        return PredictionErrorReport(
            aggregate=float(errors.mean()),
            per_cluster=per_cluster,
            per_horizon={0: float(errors.mean())},
            horizon=0,
        )

    per_cluster = {c.cluster_id: [] for c in dataset.clusters}
    per_horizon = {}
    for j in range(1, horizon_days + 1):
        train = PanelDataset(
            [_truncate(c, c.n_times - j) for c in dataset.clusters]
        )
        window = PanelDataset(
            [_truncate(c, c.n_times - j + 1) for c in dataset.clusters]
        )
        fitted = clone(estimator).fit(train)
        predictions = fitted.predict_cluster_arrays(window)
        step_errors = []
        for c in dataset.clusters:
            y_true = c.y[c.n_times - j]
            y_hat = predictions[c.cluster_id][-1]
            err = float((y_true - y_hat) ** 2)
            per_cluster[c.cluster_id].append(err)
            step_errors.append(err)
        per_horizon[j] = float(np.mean(step_errors))

    per_cluster = {cid: float(np.mean(v)) for cid, v in per_cluster.items()}
    aggregate = float(np.mean(list(per_horizon.values())))
    return PredictionErrorReport(
        aggregate=aggregate,
        per_cluster=per_cluster,
        per_horizon=per_horizon,
        horizon=horizon_days,
    )


def rolling_prediction_error(dataset: PanelDataset, estimator, horizon_days: int) -> float:
    """Aggregate rolling prediction error; see :func:`rolling_prediction_report`."""
    return rolling_prediction_report(dataset, estimator, horizon_days).aggregate


def _truncate(series, length):
    from .data import ClusterSeries

    return ClusterSeries(
        series.cluster_id, series.u[:length], series.y[:length], series.x[:length]
    )
