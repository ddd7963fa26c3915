"""Basis-dimension selection by BIC.

For the per-cluster stage the criterion is ``log(RSS) + N log(T)/T`` with
complexity ``N = (2p + 2q + 1) K`` and ``T`` the shortest series; the
candidate dimensions are the integers in ``[0.5 T^(1/5), 2 T^(1/5)]``
with the lower end raised to the smallest feasible basis.  The pooled
stage reuses the same recipe with the pooled sample size and the pooled
parameter count ``(H + m + 1) K``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .basis import build_basis
from .data import ModelSpec, PanelDataset
from .estimation import (
    SolverOptions,
    _initial_fit_on_basis,
    _pooled_fit_core,
    _weight_coefficients,
    build_design,
    initial_beta_blocks,
)
from .estimates import VarianceComponents
from .exceptions import ConfigurationError

_RSS_FLOOR = np.finfo(float).tiny


@dataclass(frozen=True)
class BicTrace:
    """Evaluated candidates as (num_basis, RSS, BIC) plus the winner."""

    candidates: tuple
    chosen: int
    initial_estimates: object = None

    def __post_init__(self):
        values = {k: bic for k, _, bic in self.candidates}
        if self.chosen not in values or values[self.chosen] > min(values.values()):
            raise ConfigurationError("chosen basis dimension does not minimise BIC")


def candidate_basis_range(n_times: int, degree: int):
    """Basis-dimension candidates from interior-knot counts in
    [0.5 T^(1/5), 2 T^(1/5)].

    The interval rule counts interior knots; the basis dimension adds
    ``degree + 1``.  Counting basis functions instead caps the resolution
    so low that transformations of a range-compressed variable cannot be
    resolved at any series length.
    """
    root = float(n_times) ** 0.2
    low = max(0, int(np.floor(0.5 * root))) + degree + 1
    high = int(np.floor(2.0 * root)) + degree + 1
    return range(low, high + 1)


def bic_select_knots(dataset: PanelDataset, spec_template: ModelSpec,
                     opts: SolverOptions = SolverOptions()) -> BicTrace:
    """Choose the stage-one basis dimension by BIC over per-cluster fits."""
    T = min(dataset.lengths)
    candidates = candidate_basis_range(T, spec_template.degree)
    if len(candidates) == 0:
        raise ConfigurationError(
            f"no feasible basis dimension for T={T}, degree={spec_template.degree}"
        )
    p, q = spec_template.n_lags, spec_template.n_covariates
    complexity = 2 * p + 2 * q + 1
    penalty = np.log(T) / T

    rows = []
    best = None
    for k in candidates:
        basis = build_basis(k, spec_template.degree)
        estimates = _initial_fit_on_basis(dataset, p, basis, opts)
        rss = max(estimates.total_objective, _RSS_FLOOR)
        bic = float(np.log(rss) + complexity * k * penalty)
        rows.append((k, rss, bic))
        if best is None or bic < best[1]:
            best = (k, bic, estimates)
    return BicTrace(candidates=tuple(rows), chosen=best[0], initial_estimates=best[2])


def bic_select_final_basis(dataset: PanelDataset, spec_template: ModelSpec,
                           coef_partition, additive_partition,
                           opts: SolverOptions = SolverOptions(),
                           initial=None, max_candidates: Optional[int] = None) -> BicTrace:
    """Choose the pooled-stage basis dimension by BIC over pooled fits.

    Candidates come from the same interval rule as the first stage; the
    lower bound is additionally raised to the stage-one dimension so the
    final basis is never coarser than the initial one.  The BIC penalty
    uses the pooled frame count and the pooled parameter count
    ``(H + m + 1) K``.
    """
    p = spec_template.n_lags
    if initial is None:
        basis0 = build_basis(spec_template.num_basis_initial, spec_template.degree)
        initial = _initial_fit_on_basis(dataset, p, basis0, opts)
    shortest = min(dataset.lengths)
    pooled_n = sum(T - p for T in dataset.lengths)
    candidates = [
        k
        for k in candidate_basis_range(shortest, spec_template.degree)
        if k >= spec_template.num_basis_initial
    ]
    if not candidates:
        candidates = [max(spec_template.num_basis_initial, spec_template.degree + 1)]
    if max_candidates is not None:
        candidates = candidates[:max_candidates]

    complexity_blocks = coef_partition.n_blocks + additive_partition.n_blocks + 1
    penalty = np.log(pooled_n) / pooled_n

    rows = []
    best = None
    for k in candidates:
        basis = build_basis(k, spec_template.degree)
        designs = build_design(dataset, basis, p)
        cs = _weight_coefficients(designs, VarianceComponents(0.0, 0.0))
        init_betas = initial_beta_blocks(initial, additive_partition, basis, opts.ridge)
        _, _, _, rss, _, _ = _pooled_fit_core(
            designs, coef_partition, additive_partition, cs, opts, init_betas
        )
        rss = max(rss, _RSS_FLOOR)
        bic = float(np.log(rss) + complexity_blocks * k * penalty)
        rows.append((k, rss, bic))
        if best is None or bic < best[1]:
            best = (k, bic)
    return BicTrace(candidates=tuple(rows), chosen=best[0])
