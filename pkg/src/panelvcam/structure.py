"""Latent structure identification from stage-one estimates.

Pairs of (cluster, term) functions are grouped by thresholding normalised
squared-L2 distances: a greedy pass seeds a block from the first
unassigned pair, collects everything within the threshold, and repeats;
an optional k-means-style refinement then reassigns pairs to the nearest
block mean.  The squared norm ``∫ f²`` is used both as the distance and
as the normaliser, exactly as stated; whether a square root was intended
of the normaliser is left as printed (see README notes).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .estimates import PairPartition
from .estimation import (
    SolverOptions,
    _fitted_values_for,
    _label_arrays,
    _pooled_fit_core,
    build_design,
    initial_beta_blocks,
)
from .exceptions import ConfigurationError, DataError, NumericalError

N_GRID = 401
_GRID = np.linspace(0.0, 1.0, N_GRID)


@dataclass(frozen=True)
class ThresholdConfig:
    """Distance threshold plus a floor guarding division by tiny norms.

    ``window`` restricts the distance integrals to a subinterval of
    [0, 1].  The default covers the whole domain; pipelines working with
    range-compressed variables pass the common support of the family's
    samples so that data-free regions, where the estimates are pure
    extrapolation, do not drive the grouping.
    """

    threshold: float
    norm_floor: float = 1e-6
    window: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not self.threshold > 0:
            raise ConfigurationError("threshold must be positive")
        if not self.norm_floor > 0:
            raise ConfigurationError("norm_floor must be positive")
        lo, hi = self.window
        if not (0.0 <= lo < hi <= 1.0):
            raise ConfigurationError("window must be a subinterval of [0, 1]")


@dataclass(frozen=True)
class DistanceMatrix:
    """Trace of the greedy scans: one row of normalised distances per seed.

    ``entries[s, p]`` is the distance of pair ``pairs[p]`` from the seed of
    scan ``s`` (NaN when the pair was already assigned before that scan).
    """

    pairs: tuple
    entries: np.ndarray
    normalizer_ids: tuple
    normalizers: tuple


def _grid_values(function) -> np.ndarray:
    return np.asarray(function(_GRID), dtype=float)


def _trapz(values) -> float:
    return float(np.trapezoid(values, _GRID))


def l2_sq_distance(f, g) -> float:
    """``∫ (f - g)²`` over [0, 1] by composite trapezoid on a fixed grid."""
    return _trapz((_grid_values(f) - _grid_values(g)) ** 2)


def l2_sq_norm(f) -> float:
    """``∫ f²`` over [0, 1]; the squared-integral norm used throughout."""
    return _trapz(_grid_values(f) ** 2)


def common_support_window(samples, trim=(0.01, 0.99), min_width: float = 0.05):
    """Largest subinterval of [0, 1] inside every sample's trimmed range.

    Used to confine distance integrals to where all the compared
    estimates are informed by data; falls back to the full domain when
    the samples barely overlap.
    """
    lows, highs = [], []
    for sample in samples:
        sample = np.asarray(sample, dtype=float)
        if sample.size == 0:
            continue
        lo, hi = np.quantile(sample, trim)
        lows.append(lo)
        highs.append(hi)
    if not lows:
        return (0.0, 1.0)
    lo, hi = max(lows), min(highs)
    if hi - lo < min_width:
        return (0.0, 1.0)
    return (float(lo), float(hi))


def _family_matrix(estimates: dict, window=(0.0, 1.0)):
    pairs = tuple(sorted(estimates))
    keep = (_GRID >= window[0]) & (_GRID <= window[1])
    grid = _GRID[keep]
    values = np.stack(
        [np.asarray(estimates[pair](grid), dtype=float) for pair in pairs]
    )
    return pairs, grid, values


def greedy_partition(estimates: dict, config: ThresholdConfig) -> PairPartition:
    """Threshold-based greedy grouping of ``{(i, j): function}`` estimates."""
    partition, _ = greedy_partition_trace(estimates, config)
    return partition


def greedy_partition_trace(estimates: dict, config: ThresholdConfig):
    """As :func:`greedy_partition` but also returning the scan distances."""
    if not estimates:
        raise DataError("no estimates to partition")
    pairs, grid, values = _family_matrix(estimates, config.window)
    n = len(pairs)
    unassigned = np.ones(n, dtype=bool)
    blocks = []
    scans = []
    seeds = []
    norms = []
    while unassigned.any():
        seed = int(np.flatnonzero(unassigned)[0])
        norm = float(np.trapezoid(values[seed] ** 2, grid))
        denom = norm if norm >= config.norm_floor else 1.0
        sq = (values[unassigned] - values[seed]) ** 2
        distances = np.trapezoid(sq, grid, axis=1) / denom
        row = np.full(n, np.nan)
        row[unassigned] = distances
        member = unassigned.copy()
        member[unassigned] = distances < config.threshold
        blocks.append([pairs[idx] for idx in np.flatnonzero(member)])
        unassigned &= ~member
        scans.append(row)
        seeds.append(pairs[seed])
        norms.append(norm)
    trace = DistanceMatrix(
        pairs=pairs,
        entries=np.vstack(scans),
        normalizer_ids=tuple(seeds),
        normalizers=tuple(norms),
    )
    return PairPartition(blocks, universe=pairs), trace


def refine_partition(estimates: dict, partition: PairPartition, max_rounds: int = 50,
                     window=(0.0, 1.0)):
    """Reassign each pair to its nearest block-mean function until stable.

    Each round recomputes block means and moves every pair to the block
    whose mean is closest in squared L2; empty blocks are dropped.  The
    within-block sum of squared distances is non-increasing over rounds.
    """
    pairs, grid, values = _family_matrix(estimates, window)
    index = {pair: idx for idx, pair in enumerate(pairs)}
    labels = np.empty(len(pairs), dtype=int)
    for k, block in enumerate(partition.blocks):
        for pair in block:
            labels[index[pair]] = k

    for _ in range(max_rounds):
        keep = np.unique(labels)
        means = np.stack([values[labels == k].mean(axis=0) for k in keep])
        sq = (values[:, None, :] - means[None, :, :]) ** 2
        cost = np.trapezoid(sq, grid, axis=2)  # (pairs, blocks)
        new_labels = keep[np.argmin(cost, axis=1)]
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    blocks = [
        [pairs[idx] for idx in np.flatnonzero(labels == k)] for k in np.unique(labels)
    ]
    return PairPartition(blocks, universe=pairs)


def within_block_dispersion(estimates: dict, partition: PairPartition,
                            window=(0.0, 1.0)) -> float:
    """Sum over blocks of squared L2 distances to the block-mean function."""
    pairs, grid, values = _family_matrix(estimates, window)
    index = {pair: idx for idx, pair in enumerate(pairs)}
    total = 0.0
    for block in partition.blocks:
        rows = values[[index[pair] for pair in sorted(block)]]
        mean = rows.mean(axis=0)
        total += float(np.trapezoid(((rows - mean) ** 2).sum(axis=0), grid))
    return total


# -- threshold selection by V-fold cross-validation ---------------------------


@dataclass(frozen=True)
class ThresholdSelection:
    """Chosen threshold with the partitions and the CV table behind it."""

    threshold: float
    n_coef_blocks: int
    n_additive_blocks: int
    coef_partition: PairPartition
    additive_partition: PairPartition
    table: tuple  # rows (threshold, n_coef_blocks, n_additive_blocks, cv_mse)


def _cv_error(designs, coef_partition, additive_partition, init_betas, opts, n_folds):
    errors = []
    for fold in range(n_folds):
        train, val = [], []
        for design in designs:
            val_times = set(design.times[design.times % n_folds == fold].tolist())
            is_val = np.array([t in val_times for t in design.times])
            uses_val_lag = np.zeros(design.n_frames, dtype=bool)
            for lag in range(1, len(design.centering.lags) + 1):
                uses_val_lag |= np.array(
                    [(t - lag) in val_times for t in design.times]
                )
            keep = ~is_val & ~uses_val_lag
            if keep.sum() < design.trend.shape[1]:
                raise DataError(
                    f"fold {fold}: too few training frames in cluster "
                    f"{design.cluster_id!r}"
                )
            train.append(design.restrict(keep))
            val.append(design.restrict(is_val))
        cs = np.zeros(len(train))
        b, alphas, betas, _, _, _ = _pooled_fit_core(
            tuple(train), coef_partition, additive_partition, cs, opts, init_betas
        )
        n = len(val)
        J = val[0].n_vars
        coef_labels = _label_arrays(coef_partition, n, J, "coefficient")
        additive_labels = _label_arrays(additive_partition, n, J, "additive")
        fitted = _fitted_values_for(
            tuple(val), coef_labels, additive_labels, lambda i: b, alphas, betas
        )
        for d, f in zip(val, fitted):
            errors.append((d.y - f) ** 2)
    pooled = np.concatenate(errors)
    if pooled.size == 0:
        raise DataError("cross-validation produced no validation frames")
    return float(pooled.mean())


def family_windows(dataset, n_lags: int):
    """Common-support windows for the two families of a scaled dataset.

    The coefficient functions share the index variable's support; the
    additive family's window intersects the supports of every lag and
    covariate sample, so that all its pairwise distances are computed
    where each member is informed.
    """
    u_samples = [c.u for c in dataset.clusters]
    additive_samples = []
    for c in dataset.clusters:
        T = c.n_times
        for j in range(1, n_lags + 1):
            additive_samples.append(c.y[: T - j])
        for l in range(c.n_covariates):
            additive_samples.append(c.x[:, l])
    return common_support_window(u_samples), common_support_window(additive_samples)


def select_threshold_cv(dataset, spec, initial, thresholds, n_folds: int = 5,
                        opts: SolverOptions = SolverOptions(), refine: bool = True,
                        norm_floor: float = 1e-6, coef_window=None,
                        additive_window=None) -> ThresholdSelection:
    """Pick the distance threshold minimising V-fold prediction error.

    Candidate thresholds inducing identical partitions are evaluated
    once; ties keep the smallest threshold (the finer structure).  The
    cross-validation fits run on the stage-one basis: the comparison is
    between structures, not basis resolutions.
    """
    thresholds = sorted(float(c) for c in thresholds)
    if not thresholds:
        raise ConfigurationError("threshold grid is empty")
    if n_folds < 2:
        raise ConfigurationError("n_folds must be at least 2")

    if coef_window is None or additive_window is None:
        u_window, v_window = family_windows(dataset, spec.n_lags)
        coef_window = coef_window or u_window
        additive_window = additive_window or v_window

    coef_family = initial.coef_family()
    additive_family = initial.additive_family()
    designs = build_design(dataset, initial.basis, spec.n_lags)

    table = []
    best = None
    seen = {}
    for threshold in thresholds:
        coef_config = ThresholdConfig(threshold, norm_floor, coef_window)
        additive_config = ThresholdConfig(threshold, norm_floor, additive_window)
        coef_part = greedy_partition(coef_family, coef_config)
        additive_part = greedy_partition(additive_family, additive_config)
        if refine:
            coef_part = refine_partition(coef_family, coef_part, window=coef_window)
            additive_part = refine_partition(
                additive_family, additive_part, window=additive_window
            )
        signature = (coef_part, additive_part)
        if signature in seen:
            table.append((threshold, coef_part.n_blocks, additive_part.n_blocks, seen[signature]))
            continue
        init_betas = initial_beta_blocks(initial, additive_part, initial.basis, opts.ridge)
        try:
            cv_mse = _cv_error(designs, coef_part, additive_part, init_betas, opts, n_folds)
        except (DataError, NumericalError) as exc:
            warnings.warn(f"skipping threshold {threshold}: {exc}", stacklevel=2)
            table.append((threshold, coef_part.n_blocks, additive_part.n_blocks, float("nan")))
            continue
        seen[signature] = cv_mse
        table.append((threshold, coef_part.n_blocks, additive_part.n_blocks, cv_mse))
        if best is None or cv_mse < best[3]:
            best = (threshold, coef_part, additive_part, cv_mse)

    if best is None:
        raise ConfigurationError("no threshold candidate could be cross-validated")
    threshold, coef_part, additive_part, _ = best
    return ThresholdSelection(
        threshold=threshold,
        n_coef_blocks=coef_part.n_blocks,
        n_additive_blocks=additive_part.n_blocks,
        coef_partition=coef_part,
        additive_partition=additive_part,
        table=tuple(table),
    )
