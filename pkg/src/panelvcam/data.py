"""Clustered panel data, model configuration, scaling and lag frames.

The on-disk format is a long-form CSV with one row per (cluster, time):
columns ``cluster_id, t, u, y, x1..xq`` with a header row.  ``u`` is
optional and defaults to the within-cluster rank ``t/T_i``.  Missing
values are not permitted.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, DataError


def _readonly(values) -> np.ndarray:
    out = np.ascontiguousarray(values, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ClusterSeries:
    """One cluster's time series: index variable, response and covariates."""

    cluster_id: str
    u: np.ndarray  # (T,)
    y: np.ndarray  # (T,)
    x: np.ndarray  # (T, q)

    def __post_init__(self):
        object.__setattr__(self, "u", _readonly(self.u))
        object.__setattr__(self, "y", _readonly(self.y))
        x = np.ascontiguousarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        T = self.y.shape[0]
        if self.u.shape != (T,) or self.x.shape[0] != T:
            raise DataError(
                f"cluster {self.cluster_id!r}: series lengths disagree "
                f"(u={self.u.shape[0]}, y={T}, x={self.x.shape[0]})"
            )
        for name, arr in (("u", self.u), ("y", self.y), ("x", self.x)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"cluster {self.cluster_id!r}: non-finite value in {name}")

    @property
    def n_times(self) -> int:
        return self.y.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]


class PanelDataset:
    """An ordered collection of cluster series sharing a covariate layout."""

    def __init__(self, clusters):
        clusters = tuple(clusters)
        if not clusters:
            raise DataError("a panel dataset needs at least one cluster")
        q = clusters[0].n_covariates
        seen = set()
        for c in clusters:
            if c.n_covariates != q:
                raise DataError(
                    f"cluster {c.cluster_id!r} has {c.n_covariates} covariates, expected {q}"
                )
            if c.cluster_id in seen:
                raise DataError(f"duplicate cluster id {c.cluster_id!r}")
            seen.add(c.cluster_id)
        self.clusters = clusters

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_covariates(self) -> int:
        return self.clusters[0].n_covariates

    @property
    def cluster_ids(self) -> tuple:
        return tuple(c.cluster_id for c in self.clusters)

    @property
    def lengths(self) -> tuple:
        return tuple(c.n_times for c in self.clusters)

    def cluster(self, cluster_id: str) -> ClusterSeries:
        for c in self.clusters:
            if c.cluster_id == cluster_id:
                return c
        raise DataError(f"unknown cluster id {cluster_id!r}")

    def pooled(self, variable: str) -> np.ndarray:
        """Concatenate one variable ('u', 'y' or 'x<l>') across clusters."""
        if variable == "u":
            return np.concatenate([c.u for c in self.clusters])
        if variable == "y":
            return np.concatenate([c.y for c in self.clusters])
        m = re.fullmatch(r"x(\d+)", variable)
        if m:
            l = int(m.group(1)) - 1
            if 0 <= l < self.n_covariates:
                return np.concatenate([c.x[:, l] for c in self.clusters])
        raise DataError(f"unknown variable {variable!r}")

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for c in self.clusters:
            frame = {
                "cluster_id": c.cluster_id,
                "t": np.arange(1, c.n_times + 1),
                "u": c.u,
                "y": c.y,
            }
            for l in range(c.n_covariates):
                frame[f"x{l + 1}"] = c.x[:, l]
            rows.append(pd.DataFrame(frame))
        return pd.concat(rows, ignore_index=True)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @staticmethod
    def from_frame(df: pd.DataFrame) -> "PanelDataset":
        return _panel_from_frame(df)

    @staticmethod
    def from_csv(path) -> "PanelDataset":
        try:
            df = pd.read_csv(path, encoding="utf-8")
        except FileNotFoundError:
            raise DataError(f"data file not found: {path}")
        except Exception as exc:  # malformed CSV
            raise DataError(f"could not parse CSV {path}: {exc}")
        return _panel_from_frame(df)


def _panel_from_frame(df: pd.DataFrame) -> PanelDataset:
    required = ["cluster_id", "t", "y"]
    for col in required:
        if col not in df.columns:
            raise DataError(f"missing required column {col!r}")
    x_cols = sorted(
        (c for c in df.columns if re.fullmatch(r"x\d+", c)),
        key=lambda c: int(c[1:]),
    )
    if not x_cols:
        raise DataError("need at least one covariate column x1..xq")
    expected = [f"x{i + 1}" for i in range(len(x_cols))]
    if x_cols != expected:
        raise DataError(f"covariate columns must be contiguous x1..xq, found {x_cols}")

    has_u = "u" in df.columns
    numeric_cols = ["t", "y"] + (["u"] if has_u else []) + x_cols
    for col in numeric_cols:
        values = pd.to_numeric(df[col], errors="coerce")
        bad = values.isna()
        if bad.any():
            line = int(df.index[bad][0]) + 2  # header is line 1
            raise DataError(f"missing or non-numeric value at line {line}, column {col!r}")
        df = df.assign(**{col: values})

    clusters = []
    for cid, group in df.groupby("cluster_id", sort=False):
        group = group.sort_values("t", kind="stable")
        t = group["t"].to_numpy()
        if np.unique(t).size != t.size:
            raise DataError(f"cluster {cid!r}: duplicate time index")
        T = len(group)
        u = group["u"].to_numpy() if has_u else np.arange(1, T + 1) / T
        x = group[x_cols].to_numpy()
        clusters.append(ClusterSeries(str(cid), u, group["y"].to_numpy(), x))
    return PanelDataset(clusters)


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions of the fitted model.

    ``num_basis_initial`` is the basis dimension of the per-cluster stage,
    ``num_basis_final`` the (at least as large) dimension of the pooled
    stage.
    """

    n_lags: int
    n_covariates: int
    num_basis_initial: int
    num_basis_final: int
    degree: int = 3

    def __post_init__(self):
        if self.n_lags < 0:
            raise ConfigurationError("n_lags must be nonnegative")
        if self.n_covariates < 1:
            raise ConfigurationError("at least one covariate is required")
        if self.degree < 0:
            raise ConfigurationError("degree must be nonnegative")
        for name in ("num_basis_initial", "num_basis_final"):
            if getattr(self, name) < self.degree + 1:
                raise ConfigurationError(
                    f"{name} must be at least degree + 1 = {self.degree + 1}"
                )
        if self.num_basis_final < self.num_basis_initial:
            raise ConfigurationError(
                "num_basis_final must be at least num_basis_initial"
            )
        if self.num_basis_final == self.num_basis_initial:
            warnings.warn(
                "num_basis_final equals num_basis_initial; the pooled stage "
                "gains no resolution over the per-cluster stage",
                stacklevel=2,
            )

    @property
    def n_vars(self) -> int:
        """Number of (lag + covariate) terms per cluster."""
        return self.n_lags + self.n_covariates


@dataclass(frozen=True)
class ScalingRecord:
    """Affine map sending a variable's pooled range onto [0, 1]."""

    variable_id: str
    minimum: float
    maximum: float

    def __post_init__(self):
        if not self.maximum > self.minimum:
            raise DataError(
                f"variable {self.variable_id!r} is degenerate "
                f"(min {self.minimum} >= max {self.maximum})"
            )

    @property
    def span(self) -> float:
        return self.maximum - self.minimum

    def scale(self, values):
        return (np.asarray(values, dtype=float) - self.minimum) / self.span

    def unscale(self, values):
        return self.minimum + self.span * np.asarray(values, dtype=float)


def scale_to_unit(dataset: PanelDataset):
    """Map every variable onto [0, 1] using its pooled min and max.

    Scaling is pooled across clusters so that one basis serves all of
    them; lagged responses later reuse the response's record.  Returns
    the scaled dataset together with the records needed to invert the
    map exactly.
    """
    names = ["u", "y"] + [f"x{l + 1}" for l in range(dataset.n_covariates)]
    records = []
    for name in names:
        pooled = dataset.pooled(name)
        lo, hi = float(pooled.min()), float(pooled.max())
        if not hi > lo:
            raise DataError(f"variable {name!r} is constant; cannot scale to [0, 1]")
        records.append(ScalingRecord(name, lo, hi))
    return apply_scaling(dataset, records), tuple(records)


def scaling_map(records) -> dict:
    return {r.variable_id: r for r in records}


def apply_scaling(dataset: PanelDataset, records, clamp: bool = False) -> PanelDataset:
    """Apply existing scaling records to a dataset.

    With ``clamp=True`` values outside the recorded range are clipped to
    [0, 1] (one warning summarises how many), which is what prediction on
    new data uses.
    """
    by_id = scaling_map(records)
    try:
        rec_u, rec_y = by_id["u"], by_id["y"]
        rec_x = [by_id[f"x{l + 1}"] for l in range(dataset.n_covariates)]
    except KeyError as exc:
        raise DataError(f"scaling record missing for variable {exc.args[0]!r}")

    n_clamped = 0

    def _one(rec, values):
        nonlocal n_clamped
        scaled = rec.scale(values)
        if clamp:
            outside = (scaled < 0.0) | (scaled > 1.0)
            n_clamped += int(outside.sum())
            scaled = np.clip(scaled, 0.0, 1.0)
        return scaled

    clusters = []
    for c in dataset.clusters:
        x = np.column_stack([_one(rec_x[l], c.x[:, l]) for l in range(c.n_covariates)])
        clusters.append(
            ClusterSeries(c.cluster_id, _one(rec_u, c.u), _one(rec_y, c.y), x)
        )
    if n_clamped:
        warnings.warn(
            f"{n_clamped} value(s) outside the training range were clamped to [0, 1]",
            stacklevel=2,
        )
    return PanelDataset(clusters)


@dataclass(frozen=True)
class ClusterFrames:
    """Aligned regression frames for one cluster.

    Frame ``k`` pairs the response at time ``times[k]`` with the index
    variable at that time, the ``n_lags`` previous responses and the
    covariates at that time.
    """

    cluster_id: str
    times: np.ndarray  # (m,) 0-based positions of the response
    u: np.ndarray      # (m,)
    y: np.ndarray      # (m,)
    lags: np.ndarray   # (m, p)
    x: np.ndarray      # (m, q)

    @property
    def n_frames(self) -> int:
        return self.y.shape[0]


def build_lag_frames(dataset: PanelDataset, n_lags: int):
    """Build per-cluster frames ``t = p+1 .. T_i`` with lag columns."""
    if n_lags < 0:
        raise ConfigurationError("n_lags must be nonnegative")
    frames = []
    for c in dataset.clusters:
        T = c.n_times
        if T <= n_lags:
            raise DataError(
                f"cluster {c.cluster_id!r}: series length {T} does not exceed "
                f"n_lags={n_lags}"
            )
        m = T - n_lags
        lags = np.empty((m, n_lags))
        for j in range(1, n_lags + 1):
            lags[:, j - 1] = c.y[n_lags - j : T - j]
        frames.append(
            ClusterFrames(
                cluster_id=c.cluster_id,
                times=np.arange(n_lags, T),
                u=c.u[n_lags:],
                y=c.y[n_lags:],
                lags=lags,
                x=c.x[n_lags:],
            )
        )
    return tuple(frames)
