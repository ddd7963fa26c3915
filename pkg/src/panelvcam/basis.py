"""Clamped B-spline bases on [0, 1] with equally spaced interior knots.

All unknown functions in the model are represented on such a basis.  The
coefficient and additive functions additionally use a *sample-centred*
variant of the basis: subtracting the per-cluster empirical mean of each
basis function makes the represented function average to zero over that
sample, which is how the identifiability conventions (coefficient
functions averaging to one, additive functions to zero) are enforced by
construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .exceptions import ConfigurationError, DataError


def _readonly(values) -> np.ndarray:
    out = np.ascontiguousarray(values, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class BSplineBasis:
    """A clamped B-spline basis of ``num_basis`` functions on [0, 1]."""

    degree: int
    num_basis: int
    knots: np.ndarray

    @property
    def num_interior_knots(self) -> int:
        return self.num_basis - self.degree - 1

    def design_matrix(self, x) -> np.ndarray:
        """Evaluate all basis functions at ``x``.

        Returns an array of shape ``(len(x), num_basis)``.  Rows are
        nonnegative and sum to one; at most ``degree + 1`` entries per row
        are nonzero.  Values outside [0, 1] are rejected: callers are
        expected to rescale their data first.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size == 0:
            return np.empty((0, self.num_basis))
        if not np.all(np.isfinite(x)):
            raise DataError("basis evaluation requires finite inputs")
        if x.min() < 0.0 or x.max() > 1.0:
            bad = float(x[(x < 0.0) | (x > 1.0)][0])
            raise DataError(
                f"basis evaluation outside [0, 1]: got {bad!r}; rescale inputs first"
            )
        return BSpline.design_matrix(x, self.knots, self.degree).toarray()

    def evaluate(self, x: float) -> np.ndarray:
        """Basis values at a single point, as a vector of length ``num_basis``."""
        return self.design_matrix([x])[0]


def build_basis(num_basis: int, degree: int = 3) -> BSplineBasis:
    """Construct a clamped basis with equally spaced interior knots.

    ``num_basis`` counts the basis functions (the coefficient dimension);
    the number of interior knots is ``num_basis - degree - 1``.
    """
    if degree < 0:
        raise ConfigurationError("spline degree must be nonnegative")
    if num_basis < degree + 1:
        raise ConfigurationError(
            f"num_basis={num_basis} is too small for degree={degree}; "
            f"need at least degree + 1 = {degree + 1}"
        )
    n_interior = num_basis - degree - 1
    interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return BSplineBasis(degree=degree, num_basis=num_basis, knots=_readonly(knots))


@dataclass(frozen=True)
class CenteringRecord:
    """Empirical means of the basis functions over a designated sample."""

    means: np.ndarray
    sample_id: str = ""


def center(basis: BSplineBasis, sample, sample_id: str = "") -> CenteringRecord:
    """Average the basis functions over ``sample``.

    Subtracting the recorded means from any later evaluation yields a
    vector whose average over the same sample is exactly zero.
    """
    sample = np.asarray(sample, dtype=float)
    if sample.size == 0:
        raise DataError("cannot centre a basis on an empty sample")
    means = basis.design_matrix(sample).mean(axis=0)
    return CenteringRecord(means=_readonly(means), sample_id=sample_id)
