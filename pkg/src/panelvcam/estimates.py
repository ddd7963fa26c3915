"""Estimated objects: functions, pair partitions and fitted models."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .basis import BSplineBasis, CenteringRecord, build_basis
from .data import ModelSpec, ScalingRecord
from .exceptions import DataError

TREND = "trend"
COEFFICIENT = "coefficient"
ADDITIVE = "additive"


@dataclass(frozen=True)
class FunctionEstimate:
    """One estimated unknown function as basis coefficients.

    Evaluation is ``offset + (B(x) - means) @ coeffs`` for centred kinds
    (coefficient functions carry offset 1, additive functions 0) and
    ``B(u) @ coeffs`` for the trend, which uses the uncentred basis.
    """

    kind: str
    coeffs: np.ndarray
    basis: BSplineBasis
    centering: Optional[CenteringRecord] = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in (TREND, COEFFICIENT, ADDITIVE):
            raise DataError(f"unknown function kind {self.kind!r}")
        coeffs = np.ascontiguousarray(self.coeffs, dtype=float)
        if coeffs.shape != (self.basis.num_basis,):
            raise DataError(
                f"coefficient vector has length {coeffs.shape}, "
                f"basis dimension is {self.basis.num_basis}"
            )
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    def __call__(self, x):
        scalar = np.isscalar(x)
        design = self.basis.design_matrix(x)
        if self.centering is not None:
            design = design - self.centering.means
        values = self.offset + design @ self.coeffs
        return float(values[0]) if scalar else values


@dataclass(frozen=True)
class VarianceComponents:
    """Within-cluster covariance parameters: noise and random-effect variance."""

    noise_variance: float
    random_effect_variance: float

    def __post_init__(self):
        if self.noise_variance < 0 or self.random_effect_variance < 0:
            raise DataError("variance components must be nonnegative")

    def weight_coefficient(self, n_frames: int) -> float:
        """Rank-one coefficient c with weight matrix ``I - c 11'``."""
        denom = n_frames * self.random_effect_variance + self.noise_variance
        if denom <= 0.0:
            return 0.0
        return self.random_effect_variance / denom


class PairPartition:
    """A partition of the pair index set S = {(i, j)} into disjoint blocks.

    ``i`` indexes clusters and ``j`` the model terms (0-based; lags first,
    then covariates).  Block order is meaningful: it fixes the indexing of
    the per-block coefficient vectors of a pooled fit.
    """

    def __init__(self, blocks, universe=None):
        cleaned = []
        for block in blocks:
            fs = frozenset((int(i), int(j)) for i, j in block)
            if not fs:
                raise DataError("partition blocks must be nonempty")
            cleaned.append(fs)
        self.blocks = tuple(cleaned)
        union = frozenset().union(*cleaned) if cleaned else frozenset()
        if sum(len(b) for b in cleaned) != len(union):
            raise DataError("partition blocks overlap")
        if universe is None:
            universe = union
        else:
            universe = frozenset((int(i), int(j)) for i, j in universe)
            if union != universe:
                missing = sorted(universe - union)
                extra = sorted(union - universe)
                raise DataError(
                    f"partition does not cover the index set exactly "
                    f"(missing {missing[:4]}, extraneous {extra[:4]})"
                )
        self.universe = universe

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def labels(self) -> dict:
        """Map each pair to the index of its block."""
        out = {}
        for k, block in enumerate(self.blocks):
            for pair in block:
                out[pair] = k
        return out

    def block_sizes(self) -> tuple:
        return tuple(len(b) for b in self.blocks)

    def is_singletons(self) -> bool:
        return all(len(b) == 1 for b in self.blocks)

    def __eq__(self, other):
        if not isinstance(other, PairPartition):
            return NotImplemented
        return frozenset(self.blocks) == frozenset(other.blocks)

    def __hash__(self):
        return hash(frozenset(self.blocks))

    def __repr__(self):
        sizes = ",".join(str(s) for s in self.block_sizes())
        return f"PairPartition({self.n_blocks} blocks; sizes {sizes})"

    @staticmethod
    def index_set(n_clusters: int, n_vars: int) -> frozenset:
        return frozenset((i, j) for i in range(n_clusters) for j in range(n_vars))

    @staticmethod
    def singletons(n_clusters: int, n_vars: int) -> "PairPartition":
        """One block per pair, in lexicographic order (the overfit layout)."""
        return PairPartition(
            [[(i, j)] for i in range(n_clusters) for j in range(n_vars)]
        )

    @staticmethod
    def pooled_by_variable(n_clusters: int, n_vars: int) -> "PairPartition":
        """One block per model term spanning all clusters (the underfit layout)."""
        return PairPartition(
            [[(i, j) for i in range(n_clusters)] for j in range(n_vars)]
        )


@dataclass(frozen=True)
class ClusterCentering:
    """The centring records of one cluster: index variable, lags, covariates."""

    cluster_id: str
    u: CenteringRecord
    lags: tuple
    x: tuple

    def for_variable(self, j: int) -> CenteringRecord:
        if j < len(self.lags):
            return self.lags[j]
        return self.x[j - len(self.lags)]


@dataclass(frozen=True)
class FittedModel:
    """The pooled fit: tied function blocks plus per-cluster centrings.

    ``coef_blocks[k]`` / ``additive_blocks[k]`` are the coefficient
    vectors of the tied function blocks; which block a cluster/term pair
    uses is recorded in the two partitions.  When ``trend_shared`` is
    false (all-singleton partitions), each cluster carries its own trend,
    absorbing its random effect.
    """

    spec: ModelSpec
    basis: BSplineBasis
    cluster_ids: tuple
    coef_partition: PairPartition
    additive_partition: PairPartition
    coef_blocks: tuple
    additive_blocks: tuple
    trend_shared: bool
    trend_blocks: tuple
    centerings: tuple
    variances: VarianceComponents
    objective: float
    converged: bool
    n_iterations: int
    scaling: Optional[tuple] = None

    def cluster_index(self, cluster_id: str) -> int:
        try:
            return self.cluster_ids.index(cluster_id)
        except ValueError:
            raise DataError(f"model was not fitted on cluster {cluster_id!r}")

    def trend_function(self, i: Optional[int] = None) -> FunctionEstimate:
        if self.trend_shared:
            coeffs = self.trend_blocks[0]
        else:
            if i is None:
                raise DataError(
                    "this model has per-cluster trends; pass a cluster index"
                )
            coeffs = self.trend_blocks[i]
        return FunctionEstimate(TREND, coeffs, self.basis)

    def coef_function(self, i: int, j: int) -> FunctionEstimate:
        k = self.coef_partition.labels()[(i, j)]
        return FunctionEstimate(
            COEFFICIENT,
            self.coef_blocks[k],
            self.basis,
            centering=self.centerings[i].u,
            offset=1.0,
        )

    def additive_function(self, i: int, j: int) -> FunctionEstimate:
        k = self.additive_partition.labels()[(i, j)]
        return FunctionEstimate(
            ADDITIVE,
            self.additive_blocks[k],
            self.basis,
            centering=self.centerings[i].for_variable(j),
        )

    def _block_representative(self, partition, blocks, kind, offset, which):
        """Block-level function with the member clusters' mean centring."""
        out = []
        for k, block in enumerate(partition.blocks):
            members = sorted(block)
            means = np.mean(
                [
                    (
                        self.centerings[i].u
                        if which == "u"
                        else self.centerings[i].for_variable(j)
                    ).means
                    for i, j in members
                ],
                axis=0,
            )
            rec = CenteringRecord(means, sample_id=f"block{k}")
            out.append(
                FunctionEstimate(kind, blocks[k], self.basis, centering=rec, offset=offset)
            )
        return out

    def block_coef_functions(self):
        return self._block_representative(
            self.coef_partition, self.coef_blocks, COEFFICIENT, 1.0, "u"
        )

    def block_additive_functions(self):
        return self._block_representative(
            self.additive_partition, self.additive_blocks, ADDITIVE, 0.0, "var"
        )

    # -- serialisation ------------------------------------------------

    def to_dict(self) -> dict:
        def _rec(rec):
            return {"means": rec.means.tolist(), "sample_id": rec.sample_id}

        return {
            "spec": {
                "n_lags": self.spec.n_lags,
                "n_covariates": self.spec.n_covariates,
                "num_basis_initial": self.spec.num_basis_initial,
                "num_basis_final": self.spec.num_basis_final,
                "degree": self.spec.degree,
            },
            "cluster_ids": list(self.cluster_ids),
            "coef_partition": [sorted(b) for b in self.coef_partition.blocks],
            "additive_partition": [sorted(b) for b in self.additive_partition.blocks],
            "coef_blocks": [b.tolist() for b in self.coef_blocks],
            "additive_blocks": [b.tolist() for b in self.additive_blocks],
            "trend_shared": self.trend_shared,
            "trend_blocks": [b.tolist() for b in self.trend_blocks],
            "centerings": [
                {
                    "cluster_id": c.cluster_id,
                    "u": _rec(c.u),
                    "lags": [_rec(r) for r in c.lags],
                    "x": [_rec(r) for r in c.x],
                }
                for c in self.centerings
            ],
            "variances": {
                "noise_variance": self.variances.noise_variance,
                "random_effect_variance": self.variances.random_effect_variance,
            },
            "objective": self.objective,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "scaling": None
            if self.scaling is None
            else [
                {"variable_id": r.variable_id, "minimum": r.minimum, "maximum": r.maximum}
                for r in self.scaling
            ],
        }

    @staticmethod
    def from_dict(payload: dict) -> "FittedModel":
        spec = ModelSpec(**payload["spec"])
        basis = build_basis(spec.num_basis_final, spec.degree)

        def _rec(d):
            return CenteringRecord(np.asarray(d["means"]), d.get("sample_id", ""))

        centerings = tuple(
            ClusterCentering(
                cluster_id=c["cluster_id"],
                u=_rec(c["u"]),
                lags=tuple(_rec(r) for r in c["lags"]),
                x=tuple(_rec(r) for r in c["x"]),
            )
            for c in payload["centerings"]
        )
        scaling = payload.get("scaling")
        return FittedModel(
            spec=spec,
            basis=basis,
            cluster_ids=tuple(payload["cluster_ids"]),
            coef_partition=PairPartition(payload["coef_partition"]),
            additive_partition=PairPartition(payload["additive_partition"]),
            coef_blocks=tuple(np.asarray(b) for b in payload["coef_blocks"]),
            additive_blocks=tuple(np.asarray(b) for b in payload["additive_blocks"]),
            trend_shared=payload["trend_shared"],
            trend_blocks=tuple(np.asarray(b) for b in payload["trend_blocks"]),
            centerings=centerings,
            variances=VarianceComponents(**payload["variances"]),
            objective=payload["objective"],
            converged=payload["converged"],
            n_iterations=payload["n_iterations"],
            scaling=None
            if scaling is None
            else tuple(ScalingRecord(**r) for r in scaling),
        )

    def with_scaling(self, records) -> "FittedModel":
        return replace(self, scaling=tuple(records))
