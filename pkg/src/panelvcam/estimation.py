"""Alternating least-squares estimation for all fitting stages.

Three stages share one computational pattern: the model is linear in the
(trend, coefficient-function) block once the additive parts are fixed,
and linear in the additive block once the others are fixed, so each
stage alternates two exact linear solves until the objective stops
moving.  The pooled stages tie coefficient vectors across clusters
according to the two pair partitions; the weighted stage replaces the
identity weight with ``I - c 11'`` per cluster, applied through its
rank-one structure rather than as a dense matrix.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .basis import build_basis, center
from .data import ModelSpec, PanelDataset, apply_scaling, build_lag_frames
from .estimates import (
    ADDITIVE,
    COEFFICIENT,
    TREND,
    ClusterCentering,
    FittedModel,
    FunctionEstimate,
    PairPartition,
    VarianceComponents,
)
from .exceptions import ConfigurationError, DataError, NumericalError


@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls shared by every alternating fit."""

    max_iterations: int = 200
    tolerance: float = 1e-8
    ridge: float = 1e-8

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be positive")
        if not self.tolerance > 0:
            raise ConfigurationError("tolerance must be positive")
        if self.ridge < 0:
            raise ConfigurationError("ridge must be nonnegative")


@dataclass(frozen=True)
class ClusterDesign:
    """Frame-level design blocks of one cluster on a fixed basis.

    ``trend`` holds the uncentred basis at the frame index values,
    ``coef`` its centred counterpart, and ``additive[j]`` the centred
    basis at the j-th model term's values (lags first, then covariates).
    """

    cluster_id: str
    y: np.ndarray
    trend: np.ndarray
    coef: np.ndarray
    additive: tuple
    centering: ClusterCentering
    times: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.y.shape[0]

    @property
    def n_vars(self) -> int:
        return len(self.additive)

    def restrict(self, keep) -> "ClusterDesign":
        """Row subset of the frames; centrings are left untouched."""
        keep = np.asarray(keep)
        return ClusterDesign(
            cluster_id=self.cluster_id,
            y=self.y[keep],
            trend=self.trend[keep],
            coef=self.coef[keep],
            additive=tuple(g[keep] for g in self.additive),
            centering=self.centering,
            times=self.times[keep],
        )


def build_design(dataset: PanelDataset, basis, n_lags: int):
    """Assemble per-cluster design blocks on the given basis.

    Centring samples follow the estimator's conventions: the index
    variable and covariates are averaged over all observed times, the
    j-th lag over the response values that actually appear as that lag.
    """
    frames = build_lag_frames(dataset, n_lags)
    designs = []
    for series, frame in zip(dataset.clusters, frames):
        T = series.n_times
        min_len = n_lags + basis.num_basis + basis.degree
        if T < min_len:
            raise DataError(
                f"cluster {series.cluster_id!r}: length {T} is below the "
                f"minimum {min_len} for a {basis.num_basis}-dimensional basis"
            )
        all_u = basis.design_matrix(series.u)
        u_rec = center(basis, series.u, sample_id=f"{series.cluster_id}:u")
        trend = all_u[n_lags:]
        coef = trend - u_rec.means

        additive = []
        lag_recs = []
        for j in range(1, n_lags + 1):
            sample = series.y[: T - j]
            rec = center(basis, sample, sample_id=f"{series.cluster_id}:lag{j}")
            rows = basis.design_matrix(sample)[n_lags - j :]
            additive.append(rows - rec.means)
            lag_recs.append(rec)
        x_recs = []
        for l in range(series.n_covariates):
            rec = center(basis, series.x[:, l], sample_id=f"{series.cluster_id}:x{l + 1}")
            rows = basis.design_matrix(series.x[n_lags:, l])
            additive.append(rows - rec.means)
            x_recs.append(rec)

        designs.append(
            ClusterDesign(
                cluster_id=series.cluster_id,
                y=frame.y,
                trend=trend,
                coef=coef,
                additive=tuple(additive),
                centering=ClusterCentering(
                    cluster_id=series.cluster_id,
                    u=u_rec,
                    lags=tuple(lag_recs),
                    x=tuple(x_recs),
                ),
                times=frame.times,
            )
        )
    return tuple(designs)


# -- linear algebra helpers ------------------------------------------------


def _solve(xtx, xty, ridge, context):
    a = np.array(xtx, dtype=float, copy=True)
    if ridge:
        a[np.diag_indices_from(a)] += ridge
    try:
        sol = np.linalg.solve(a, xty)
    except np.linalg.LinAlgError:
        raise NumericalError(f"singular normal equations in {context}")
    if not np.all(np.isfinite(sol)):
        raise NumericalError(f"non-finite solution in {context}")
    return sol


def _gram(design_matrix, target, c):
    """Cross products under the weight ``I - c 11'`` (rank-one downdate)."""
    xtx = design_matrix.T @ design_matrix
    xty = design_matrix.T @ target
    if c > 0.0:
        s = design_matrix.sum(axis=0)
        xtx -= c * np.outer(s, s)
        xty -= (c * target.sum()) * s
    return xtx, xty


def _weighted_rss(residual, c):
    value = float(residual @ residual)
    if c > 0.0:
        value -= c * float(residual.sum()) ** 2
    return value


def _weight_coefficients(designs, variances):
    return np.array(
        [variances.weight_coefficient(d.n_frames) for d in designs]
    )


# -- single-cluster alternation ---------------------------------------------


def _additive_only_fit(design, ridge, c=0.0):
    """One linear solve of the purely additive model (coefficients fixed at one).

    This initialises the additive blocks before the alternation starts.
    """
    m, k = design.trend.shape
    X = np.concatenate([design.trend] + list(design.additive), axis=1)
    xtx, xty = _gram(X, design.y, c)
    theta = _solve(xtx, xty, ridge, f"additive initialisation ({design.cluster_id})")
    b = theta[:k]
    g = theta[k:].reshape(design.n_vars, k)
    return b, g


def _coef_step_single(design, g, ridge, c=0.0):
    """Solve for (trend, coefficient blocks) with the additive blocks fixed."""
    m, k = design.trend.shape
    J = design.n_vars
    w = np.column_stack([design.additive[j] @ g[j] for j in range(J)])
    X = np.empty((m, k * (1 + J)))
    X[:, :k] = design.trend
    for j in range(J):
        X[:, k * (1 + j) : k * (2 + j)] = design.coef * w[:, j : j + 1]
    target = design.y - w.sum(axis=1)
    xtx, xty = _gram(X, target, c)
    theta = _solve(xtx, xty, ridge, f"coefficient step ({design.cluster_id})")
    return theta[:k], theta[k:].reshape(J, k)


def _additive_step_single(design, b, a, ridge, c=0.0):
    """Solve for the additive blocks with (trend, coefficients) fixed."""
    m, k = design.trend.shape
    J = design.n_vars
    z = 1.0 + design.coef @ a.T  # (m, J)
    X = np.empty((m, k * J))
    for j in range(J):
        X[:, k * j : k * (j + 1)] = design.additive[j] * z[:, j : j + 1]
    target = design.y - design.trend @ b
    xtx, xty = _gram(X, target, c)
    theta = _solve(xtx, xty, ridge, f"additive step ({design.cluster_id})")
    return theta.reshape(J, k)


def _fitted_single(design, b, a, g):
    z = 1.0 + design.coef @ a.T
    w = np.column_stack([design.additive[j] @ g[j] for j in range(design.n_vars)])
    return design.trend @ b + (z * w).sum(axis=1)


def _objective_single(design, b, a, g, c=0.0):
    return _weighted_rss(design.y - _fitted_single(design, b, a, g), c)


def _fit_single(design, opts, c=0.0):
    """Alternate the two half-steps on one cluster until the objective settles."""
    b, g = _additive_only_fit(design, opts.ridge, c)
    a = np.zeros_like(g)
    previous = _objective_single(design, b, a, g, c)
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iterations + 1):
        b, a = _coef_step_single(design, g, opts.ridge, c)
        g = _additive_step_single(design, b, a, opts.ridge, c)
        objective = _objective_single(design, b, a, g, c)
        if abs(previous - objective) <= opts.tolerance * (1.0 + previous):
            previous = objective
            converged = True
            break
        previous = objective
    return b, a, g, previous, converged, iterations


# -- initial (per-cluster) stage --------------------------------------------


@dataclass(frozen=True)
class ClusterInitialFit:
    """Per-cluster stage-one estimates; the trend absorbs the random effect."""

    cluster_id: str
    trend: FunctionEstimate
    coefs: tuple
    additives: tuple
    objective: float
    converged: bool
    n_iterations: int


@dataclass(frozen=True)
class InitialEstimates:
    basis: object
    cluster_ids: tuple
    clusters: tuple

    @property
    def total_objective(self) -> float:
        return float(sum(c.objective for c in self.clusters))

    def coef_family(self) -> dict:
        return {
            (i, j): fit.coefs[j]
            for i, fit in enumerate(self.clusters)
            for j in range(len(fit.coefs))
        }

    def additive_family(self) -> dict:
        return {
            (i, j): fit.additives[j]
            for i, fit in enumerate(self.clusters)
            for j in range(len(fit.additives))
        }


def _initial_fit_on_basis(dataset, n_lags, basis, opts):
    designs = build_design(dataset, basis, n_lags)
    fits = []
    stalled = []
    for design in designs:
        b, a, g, objective, converged, iterations = _fit_single(design, opts)
        if not converged:
            stalled.append(design.cluster_id)
        cent = design.centering
        coefs = tuple(
            FunctionEstimate(COEFFICIENT, a[j], basis, centering=cent.u, offset=1.0)
            for j in range(design.n_vars)
        )
        additives = tuple(
            FunctionEstimate(ADDITIVE, g[j], basis, centering=cent.for_variable(j))
            for j in range(design.n_vars)
        )
        fits.append(
            ClusterInitialFit(
                cluster_id=design.cluster_id,
                trend=FunctionEstimate(TREND, b, basis),
                coefs=coefs,
                additives=additives,
                objective=objective,
                converged=converged,
                n_iterations=iterations,
            )
        )
    if stalled:
        warnings.warn(
            f"per-cluster fit did not converge within "
            f"{opts.max_iterations} iterations for clusters {stalled}",
            stacklevel=2,
        )
    return InitialEstimates(
        basis=basis,
        cluster_ids=dataset.cluster_ids,
        clusters=tuple(fits),
    )


def initial_fit(dataset: PanelDataset, spec: ModelSpec, opts: SolverOptions = SolverOptions()):
    """Stage one: fit every cluster separately on the initial basis."""
    basis = build_basis(spec.num_basis_initial, spec.degree)
    return _initial_fit_on_basis(dataset, spec.n_lags, basis, opts)


# -- pooled stages -----------------------------------------------------------


def _label_arrays(partition, n_clusters, n_vars, family):
    labels = partition.labels()
    expected = PairPartition.index_set(n_clusters, n_vars)
    if partition.universe != expected:
        raise DataError(
            f"{family} partition universe does not match the dataset "
            f"({n_clusters} clusters x {n_vars} terms)"
        )
    out = np.empty((n_clusters, n_vars), dtype=int)
    for (i, j), k in labels.items():
        out[i, j] = k
    return out


def _grid_projection(basis, function, ridge):
    grid = np.linspace(0.0, 1.0, 401)
    design = basis.design_matrix(grid)
    xtx, xty = _gram(design, function(grid), 0.0)
    return _solve(xtx, xty, max(ridge, 1e-10), "basis projection")


def initial_beta_blocks(initial: InitialEstimates, additive_partition, basis, ridge=1e-8):
    """Starting values for the tied additive blocks: block averages of the
    stage-one estimates, projected onto the target basis when it differs."""
    family = initial.additive_family()
    blocks = []
    same_basis = (
        basis.num_basis == initial.basis.num_basis
        and basis.degree == initial.basis.degree
    )
    for block in additive_partition.blocks:
        members = [family[pair] for pair in sorted(block)]
        if same_basis:
            blocks.append(np.mean([fe.coeffs for fe in members], axis=0))
        else:
            grid_mean = lambda x, fns=members: np.mean([fe(x) for fe in fns], axis=0)
            blocks.append(_grid_projection(basis, grid_mean, ridge))
    return blocks


def _pooled_coef_step(designs, coef_labels, additive_labels, betas, cs, ridge, n_blocks):
    k = designs[0].trend.shape[1]
    dim = k * (1 + n_blocks)
    xtx = np.zeros((dim, dim))
    xty = np.zeros(dim)
    for i, d in enumerate(designs):
        J = d.n_vars
        w = np.column_stack(
            [d.additive[j] @ betas[additive_labels[i, j]] for j in range(J)]
        )
        X = np.zeros((d.n_frames, dim))
        X[:, :k] = d.trend
        for j in range(J):
            kk = coef_labels[i, j]
            X[:, k * (1 + kk) : k * (2 + kk)] += d.coef * w[:, j : j + 1]
        target = d.y - w.sum(axis=1)
        g_xtx, g_xty = _gram(X, target, cs[i])
        xtx += g_xtx
        xty += g_xty
    theta = _solve(xtx, xty, ridge, "pooled coefficient step")
    return theta[:k], [theta[k * (1 + kk) : k * (2 + kk)] for kk in range(n_blocks)]


def _pooled_additive_step(designs, coef_labels, additive_labels, b, alphas, cs, ridge, n_blocks):
    k = designs[0].trend.shape[1]
    dim = k * n_blocks
    xtx = np.zeros((dim, dim))
    xty = np.zeros(dim)
    for i, d in enumerate(designs):
        J = d.n_vars
        X = np.zeros((d.n_frames, dim))
        for j in range(J):
            z = 1.0 + d.coef @ alphas[coef_labels[i, j]]
            kk = additive_labels[i, j]
            X[:, k * kk : k * (kk + 1)] += d.additive[j] * z[:, None]
        target = d.y - d.trend @ b
        g_xtx, g_xty = _gram(X, target, cs[i])
        xtx += g_xtx
        xty += g_xty
    theta = _solve(xtx, xty, ridge, "pooled additive step")
    return [theta[k * kk : k * (kk + 1)] for kk in range(n_blocks)]


def _fitted_values_for(designs, coef_labels, additive_labels, trend_for, alphas, betas):
    """Fitted responses per cluster; ``trend_for(i)`` supplies the trend vector."""
    fitted = []
    for i, d in enumerate(designs):
        values = d.trend @ trend_for(i)
        for j in range(d.n_vars):
            z = 1.0 + d.coef @ alphas[coef_labels[i, j]]
            w = d.additive[j] @ betas[additive_labels[i, j]]
            values = values + z * w
        fitted.append(values)
    return fitted


def _pooled_objective(designs, coef_labels, additive_labels, trend_for, alphas, betas, cs):
    fitted = _fitted_values_for(designs, coef_labels, additive_labels, trend_for, alphas, betas)
    return float(
        sum(_weighted_rss(d.y - f, cs[i]) for i, (d, f) in enumerate(zip(designs, fitted)))
    )


def _pooled_fit_core(designs, coef_partition, additive_partition, cs, opts,
                     init_betas, warm_start=None):
    """Common-trend alternation with coefficients tied across blocks."""
    n = len(designs)
    J = designs[0].n_vars
    coef_labels = _label_arrays(coef_partition, n, J, "coefficient")
    additive_labels = _label_arrays(additive_partition, n, J, "additive")
    H = coef_partition.n_blocks
    M = additive_partition.n_blocks

    if warm_start is not None:
        b, alphas, betas = warm_start
        b = np.asarray(b, dtype=float)
        alphas = [np.asarray(v, dtype=float) for v in alphas]
        betas = [np.asarray(v, dtype=float) for v in betas]
        previous = _pooled_objective(
            designs, coef_labels, additive_labels, lambda i: b, alphas, betas, cs
        )
    else:
        betas = [np.asarray(v, dtype=float) for v in init_betas]
        previous = np.inf

    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iterations + 1):
        b, alphas = _pooled_coef_step(
            designs, coef_labels, additive_labels, betas, cs, opts.ridge, H
        )
        betas = _pooled_additive_step(
            designs, coef_labels, additive_labels, b, alphas, cs, opts.ridge, M
        )
        objective = _pooled_objective(
            designs, coef_labels, additive_labels, lambda i: b, alphas, betas, cs
        )
        if np.isfinite(previous) and abs(previous - objective) <= opts.tolerance * (
            1.0 + previous
        ):
            previous = objective
            converged = True
            break
        previous = objective
    return b, alphas, betas, previous, converged, iterations


def _per_cluster_pooled(designs, coef_partition, additive_partition, cs, opts):
    """All-singleton partitions: the pooled objective decouples, so every
    cluster is fitted on its own, each with its own trend (which then
    absorbs that cluster's random effect)."""
    n = len(designs)
    J = designs[0].n_vars
    coef_labels = _label_arrays(coef_partition, n, J, "coefficient")
    additive_labels = _label_arrays(additive_partition, n, J, "additive")

    trends = [None] * n
    alphas = [None] * coef_partition.n_blocks
    betas = [None] * additive_partition.n_blocks
    total = 0.0
    all_converged = True
    max_iterations = 0
    stalled = []
    for i, design in enumerate(designs):
        b, a, g, objective, converged, iterations = _fit_single(design, opts, cs[i])
        trends[i] = b
        for j in range(J):
            alphas[coef_labels[i, j]] = a[j]
            betas[additive_labels[i, j]] = g[j]
        total += objective
        all_converged &= converged
        if not converged:
            stalled.append(design.cluster_id)
        max_iterations = max(max_iterations, iterations)
    if stalled:
        warnings.warn(
            f"per-cluster fit did not converge for clusters {stalled}", stacklevel=3
        )
    return trends, alphas, betas, total, all_converged, max_iterations


def _pooled_entry(dataset, spec, coef_partition, additive_partition, variances,
                  opts, initial, warm_start):
    basis = build_basis(spec.num_basis_final, spec.degree)
    designs = build_design(dataset, basis, spec.n_lags)
    cs = _weight_coefficients(designs, variances)

    singleton = coef_partition.is_singletons() and additive_partition.is_singletons()
    if singleton:
        trends, alphas, betas, objective, converged, iterations = _per_cluster_pooled(
            designs, coef_partition, additive_partition, cs, opts
        )
        trend_shared = False
        trend_blocks = tuple(trends)
    else:
        if warm_start is not None:
            start = (warm_start.trend_blocks[0], warm_start.coef_blocks, warm_start.additive_blocks)
            init_betas = None
        else:
            start = None
            if initial is None:
                initial = initial_fit(dataset, spec, opts)
            init_betas = initial_beta_blocks(initial, additive_partition, basis, opts.ridge)
        b, alphas, betas, objective, converged, iterations = _pooled_fit_core(
            designs, coef_partition, additive_partition, cs, opts, init_betas, start
        )
        if not converged:
            warnings.warn(
                f"pooled fit did not converge within {opts.max_iterations} iterations",
                stacklevel=3,
            )
        trend_shared = True
        trend_blocks = (b,)

    return FittedModel(
        spec=spec,
        basis=basis,
        cluster_ids=dataset.cluster_ids,
        coef_partition=coef_partition,
        additive_partition=additive_partition,
        coef_blocks=tuple(np.asarray(v) for v in alphas),
        additive_blocks=tuple(np.asarray(v) for v in betas),
        trend_shared=trend_shared,
        trend_blocks=tuple(np.asarray(v) for v in trend_blocks),
        centerings=tuple(d.centering for d in designs),
        variances=variances,
        objective=objective,
        converged=converged,
        n_iterations=iterations,
    )


def working_independence_fit(dataset, spec, coef_partition, additive_partition,
                             opts: SolverOptions = SolverOptions(), initial=None):
    """Pooled fit under the identity weight (ignoring within-cluster correlation)."""
    return _pooled_entry(
        dataset, spec, coef_partition, additive_partition,
        VarianceComponents(0.0, 0.0), opts, initial, None,
    )


def weighted_final_fit(dataset, spec, coef_partition, additive_partition, variances,
                       opts: SolverOptions = SolverOptions(), initial=None,
                       warm_start=None):
    """Pooled fit weighted by ``I - c_i 11'`` with c_i from the variance components."""
    return _pooled_entry(
        dataset, spec, coef_partition, additive_partition, variances, opts,
        initial, warm_start,
    )


# -- variance components -----------------------------------------------------


def estimate_variance_components(residuals) -> VarianceComponents:
    """Project the residual outer products onto span{I, 11'}.

    Minimises the squared Frobenius distance between ``r_i r_i'`` and
    ``s2 I + se2 11'`` summed over clusters; the two normal equations are
    solved in closed form and the result is clamped to be nonnegative.
    """
    residuals = [np.asarray(r, dtype=float).ravel() for r in residuals]
    if not residuals:
        raise DataError("no residuals given")
    m = np.array([r.size for r in residuals], dtype=float)
    if np.any(m == 0):
        raise DataError("empty residual vector")
    sum_m = m.sum()
    sum_m2 = (m**2).sum()
    if sum_m2 <= sum_m:  # every cluster contributes a single frame
        raise DataError(
            "random-effect variance is unidentifiable: every cluster has one frame"
        )
    b1 = float(sum(r @ r for r in residuals))
    b2 = float(sum(r.sum() ** 2 for r in residuals))
    det = sum_m * sum_m2 - sum_m**2
    s2 = (sum_m2 * b1 - sum_m * b2) / det
    se2 = (sum_m * b2 - sum_m * b1) / det
    if se2 < 0.0:
        se2 = 0.0
        s2 = b1 / sum_m
    if s2 < 0.0:
        s2 = 0.0
        se2 = max(b2 / sum_m2, 0.0)
    return VarianceComponents(noise_variance=s2, random_effect_variance=se2)


def fitted_residuals(model: FittedModel, dataset: PanelDataset):
    """Per-cluster residuals of a fitted model, in the model's fit space."""
    if model.scaling is not None:
        dataset = apply_scaling(dataset, model.scaling)
    designs = build_design(dataset, model.basis, model.spec.n_lags)
    n = len(designs)
    J = designs[0].n_vars
    coef_labels = _label_arrays(model.coef_partition, n, J, "coefficient")
    additive_labels = _label_arrays(model.additive_partition, n, J, "additive")
    if model.trend_shared:
        trend_for = lambda i: model.trend_blocks[0]
    else:
        trend_for = lambda i: model.trend_blocks[i]
    fitted = _fitted_values_for(
        designs, coef_labels, additive_labels, trend_for,
        list(model.coef_blocks), list(model.additive_blocks),
    )
    return [d.y - f for d, f in zip(designs, fitted)]


def refine_variance_loop(dataset, spec, coef_partition, additive_partition,
                         opts: SolverOptions = SolverOptions(), initial=None,
                         variances=None, max_rounds: int = 25,
                         variance_tolerance: float = 1e-6):
    """Alternate variance estimation and the weighted fit until both settle."""
    if variances is None:
        fit = working_independence_fit(
            dataset, spec, coef_partition, additive_partition, opts, initial
        )
        variances = estimate_variance_components(fitted_residuals(fit, dataset))
        warm = fit
    else:
        warm = None

    for _ in range(max_rounds):
        fit = weighted_final_fit(
            dataset, spec, coef_partition, additive_partition, variances, opts,
            initial=initial,
            warm_start=warm if (warm is not None and warm.trend_shared) else None,
        )
        warm = fit
        updated = estimate_variance_components(fitted_residuals(fit, dataset))
        scale = 1.0 + max(variances.noise_variance, variances.random_effect_variance)
        drift = max(
            abs(updated.noise_variance - variances.noise_variance),
            abs(updated.random_effect_variance - variances.random_effect_variance),
        )
        variances = updated
        if drift <= variance_tolerance * scale:
            return fit

    warnings.warn(
        f"variance refinement did not settle within {max_rounds} rounds; "
        "returning the last iterate",
        stacklevel=2,
    )
    return warm


# -- prediction ---------------------------------------------------------------


def predict(model: FittedModel, dataset: PanelDataset) -> dict:
    """Fitted/predicted responses for every frame of ``dataset``.

    If the model carries scaling records the input is taken to be in raw
    units: inputs are scaled (values outside the training range are
    clamped to [0, 1] with a warning) and predictions are mapped back.
    Returns ``{cluster_id: predictions}`` aligned with the frames
    ``t = n_lags+1 .. T_i``.
    """
    raw = model.scaling is not None
    working = apply_scaling(dataset, model.scaling, clamp=True) if raw else dataset
    frames = build_lag_frames(working, model.spec.n_lags)
    basis = model.basis
    p, q = model.spec.n_lags, model.spec.n_covariates
    coef_labels = model.coef_partition.labels()
    additive_labels = model.additive_partition.labels()

    out = {}
    for frame in frames:
        i = model.cluster_index(frame.cluster_id)
        cent = model.centerings[i]
        trend_rows = basis.design_matrix(frame.u)
        coef_rows = trend_rows - cent.u.means
        trend_vec = model.trend_blocks[0] if model.trend_shared else model.trend_blocks[i]
        values = trend_rows @ trend_vec
        for j in range(p + q):
            raw_values = frame.lags[:, j] if j < p else frame.x[:, j - p]
            rows = basis.design_matrix(raw_values) - cent.for_variable(j).means
            z = 1.0 + coef_rows @ model.coef_blocks[coef_labels[(i, j)]]
            w = rows @ model.additive_blocks[additive_labels[(i, j)]]
            values = values + z * w
        if raw:
            rec = {r.variable_id: r for r in model.scaling}["y"]
            values = rec.unscale(values)
        out[frame.cluster_id] = values
    return out
