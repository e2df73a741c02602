"""Space-time discretization for time-periodic 1D diffusion problems.

A problem lives on the interval [0, L] with homogeneous Dirichlet boundary
values and on a periodic time circle of length T.  Space carries M interior
nodes x_i = (i+1)*dx with dx = L/(M+1); the two boundary (ghost) values are
identically zero.  Time carries N slices t_n = n*dt with dt = T/N and all
index arithmetic modulo N, so periodicity is structural rather than a
constraint to be enforced.

Trajectories are plain numpy arrays of shape (N, M): slice n holds the field
at t_n.  Dual trajectories use the same layout but are read through the
pairing <xi, u> = sum_i dx * xi_i * u_i per slice.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .convexcore import DiffusionField, Nonlinearity

__all__ = [
    "SpatialMesh",
    "TemporalMesh",
    "PeriodicTrajectory",
    "DualTrajectory",
    "ProblemSpec",
    "time_derivative",
    "norm_V",
    "norm_Vstar",
    "norm_X",
    "pairing",
    "bochner_norm",
    "sample_forcing",
    "write_field_csv",
    "read_field_csv",
    "write_field_dat",
]

# Trajectory types. Shape (N, M), row n = field at time slice n. Periodic wrap
# is applied by the operators, never stored twice.
PeriodicTrajectory = np.ndarray
# Same layout, interpreted through the duality pairing per slice.
DualTrajectory = np.ndarray


@dataclass(frozen=True)
class SpatialMesh:
    """Uniform 1D mesh on [0, length] with homogeneous Dirichlet ghosts.

    interior_count is the number of unknowns per slice; the mesh has
    interior_count + 1 cells whose midpoints carry diffusion coefficients.
    """

    length: float
    interior_count: int

    def __post_init__(self) -> None:
        if not (self.length > 0.0 and math.isfinite(self.length)):
            raise ValueError(f"mesh length must be positive, got {self.length}")
        if self.interior_count < 1:
            raise ValueError(
                f"interior_count must be >= 1, got {self.interior_count}"
            )

    @property
    def dx(self) -> float:
        return self.length / (self.interior_count + 1)

    @property
    def nodes(self) -> np.ndarray:
        """Interior node coordinates, shape (M,)."""
        return self.dx * np.arange(1, self.interior_count + 1)

    @property
    def cell_midpoints(self) -> np.ndarray:
        """Midpoints of the M+1 cells, shape (M+1,)."""
        return self.dx * (np.arange(self.interior_count + 1) + 0.5)


@dataclass(frozen=True)
class TemporalMesh:
    """Periodic time mesh: N slices over one period T, indices modulo N."""

    period: float
    step_count: int

    def __post_init__(self) -> None:
        if not (self.period > 0.0 and math.isfinite(self.period)):
            raise ValueError(f"period must be positive, got {self.period}")
        if self.step_count < 2:
            raise ValueError(f"step_count must be >= 2, got {self.step_count}")

    @property
    def dt(self) -> float:
        return self.period / self.step_count

    @property
    def times(self) -> np.ndarray:
        """Slice times t_n = n*dt, shape (N,)."""
        return self.dt * np.arange(self.step_count)


def validate_trajectory(
    values: np.ndarray,
    smesh: SpatialMesh,
    tmesh: TemporalMesh,
    name: str = "trajectory",
) -> np.ndarray:
    """Check shape (N, M) and finiteness; returns the array unchanged."""
    arr = np.asarray(values, dtype=float)
    expected = (tmesh.step_count, smesh.interior_count)
    if arr.shape != expected:
        raise ValueError(f"{name} has shape {arr.shape}, expected {expected}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass
class ProblemSpec:
    """One full problem instance.

    Exponents p (state-space norm, matches the rate nonlinearity) and
    m (gradient-energy exponent), the rate nonlinearity `nl`, the cellwise
    diffusion coefficient `a`, the sampled forcing `f` of shape (N, M), and
    the two meshes.  In one space dimension the compact-embedding
    precondition behind the exponent pairing holds for every p, m > 1, so it
    is recorded here but never enforced.
    """

    p: float
    m: float
    nl: "Nonlinearity"
    a: "DiffusionField"
    f: DualTrajectory
    smesh: SpatialMesh
    tmesh: TemporalMesh

    def __post_init__(self) -> None:
        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not self.m > 1.0:
            raise ValueError(f"m must exceed 1, got {self.m}")
        if abs(self.nl.p_exponent - self.p) > 1e-12:
            raise ValueError(
                "nonlinearity exponent "
                f"{self.nl.p_exponent} does not match problem p = {self.p}"
            )
        ncells = self.smesh.interior_count + 1
        if self.a.midpoint_values.shape != (ncells,):
            raise ValueError(
                f"diffusion field has {self.a.midpoint_values.shape[0]} cells, "
                f"mesh needs {ncells}"
            )
        self.f = validate_trajectory(self.f, self.smesh, self.tmesh, "forcing")

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def m_conj(self) -> float:
        return self.m / (self.m - 1.0)


# ---------------------------------------------------------------------------
# discrete calculus


def time_derivative(u: PeriodicTrajectory, tmesh: TemporalMesh) -> PeriodicTrajectory:
    """Backward difference with periodic wrap: slice n is (u_n - u_{n-1})/dt.

    Summing the output over one period gives the zero field exactly
    (telescoping around the wrap).
    """
    u = np.asarray(u, dtype=float)
    return (u - np.roll(u, 1, axis=0)) / tmesh.dt


def pairing(xi: np.ndarray, v: np.ndarray, smesh: SpatialMesh) -> float | np.ndarray:
    """Duality pairing <xi, v> = sum_i dx xi_i v_i over the last axis."""
    return smesh.dx * np.sum(np.asarray(xi) * np.asarray(v), axis=-1)


def norm_V(v: np.ndarray, p: float, smesh: SpatialMesh) -> float | np.ndarray:
    """Nodal L^p norm (sum dx |v_i|^p)^(1/p) over the last axis.

    For a constant field this misses the two boundary half-cells, so the
    value is (L - dx)^(1/p) rather than L^(1/p); the O(dx) defect is the
    documented boundary-cell quadrature convention.
    """
    v = np.asarray(v, dtype=float)
    return (smesh.dx * np.sum(np.abs(v) ** p, axis=-1)) ** (1.0 / p)


def norm_Vstar(xi: np.ndarray, p_conj: float, smesh: SpatialMesh) -> float | np.ndarray:
    """Dual-side nodal norm with the conjugate exponent p' passed directly."""
    xi = np.asarray(xi, dtype=float)
    return (smesh.dx * np.sum(np.abs(xi) ** p_conj, axis=-1)) ** (1.0 / p_conj)


def cell_gradient(v: np.ndarray, smesh: SpatialMesh) -> np.ndarray:
    """Cellwise gradient with Dirichlet ghosts, last axis M -> M+1."""
    v = np.asarray(v, dtype=float)
    pad = [(0, 0)] * (v.ndim - 1) + [(1, 1)]
    z = np.pad(v, pad)
    return np.diff(z, axis=-1) / smesh.dx


def norm_X(v: np.ndarray, m: float, smesh: SpatialMesh) -> float | np.ndarray:
    """Gradient-energy norm (sum_cells dx |Dv|^m)^(1/m) over the last axis."""
    dv = cell_gradient(v, smesh)
    return (smesh.dx * np.sum(np.abs(dv) ** m, axis=-1)) ** (1.0 / m)


def bochner_norm(
    u: np.ndarray,
    spatial_norm: Callable[[np.ndarray], float | np.ndarray],
    r: float,
    tmesh: TemporalMesh,
) -> float:
    """Time-integrated norm (sum_n dt |u_n|^r)^(1/r); r = inf gives max_n.

    `spatial_norm` maps a trajectory to per-slice norms; it receives the
    full (N, M) array and must reduce over the last axis.
    """
    slice_norms = np.asarray(spatial_norm(u), dtype=float)
    if slice_norms.shape != (tmesh.step_count,):
        raise ValueError(
            "spatial_norm must reduce slices to shape "
            f"({tmesh.step_count},), got {slice_norms.shape}"
        )
    if math.isinf(r):
        return float(np.max(slice_norms))
    if r < 1.0:
        raise ValueError(f"exponent r must be >= 1 or inf, got {r}")
    return float((tmesh.dt * np.sum(slice_norms**r)) ** (1.0 / r))


# ---------------------------------------------------------------------------
# forcing ingestion


def _sample_sinusoid_term(
    term: Mapping, smesh: SpatialMesh, tmesh: TemporalMesh
) -> np.ndarray:
    amp = float(term.get("amplitude", 1.0))
    k = float(term.get("space_mode", 1))
    j = float(term.get("time_mode", 0))
    space_profile = term.get("space_profile", "sin")
    time_profile = term.get("time_profile", "const")
    x = smesh.nodes
    t = tmesh.times
    if space_profile == "sin":
        sx = np.sin(np.pi * k * x / smesh.length)
    elif space_profile == "cos":
        sx = np.cos(np.pi * k * x / smesh.length)
    else:
        raise ValueError(f"unknown space_profile {space_profile!r}")
    if time_profile == "const":
        st = np.ones_like(t)
    elif time_profile == "sin":
        st = np.sin(2.0 * np.pi * j * t / tmesh.period)
    elif time_profile == "cos":
        st = np.cos(2.0 * np.pi * j * t / tmesh.period)
    else:
        raise ValueError(f"unknown time_profile {time_profile!r}")
    return amp * st[:, None] * sx[None, :]


def sample_forcing(
    expr: Mapping | Callable[[np.ndarray, float], np.ndarray],
    smesh: SpatialMesh,
    tmesh: TemporalMesh,
) -> DualTrajectory:
    """Sample a forcing specification on the space-time grid.

    `expr` is either a callable f(x_array, t) -> array, or a mapping with a
    "kind" key: "zero", "sinusoid" (one product term), "terms" (sum of
    sinusoid terms), or "csv" (grid file with header t,x,value matching the
    meshes).  Time-periodic extension is implied by sampling only t_0..t_{N-1}.
    """
    if callable(expr):
        rows = [np.asarray(expr(smesh.nodes, t), dtype=float) for t in tmesh.times]
        out = np.stack(rows, axis=0)
        return validate_trajectory(out, smesh, tmesh, "forcing")
    kind = expr.get("kind")
    if kind == "zero":
        return np.zeros((tmesh.step_count, smesh.interior_count))
    if kind == "sinusoid":
        return _sample_sinusoid_term(expr, smesh, tmesh)
    if kind == "terms":
        out = np.zeros((tmesh.step_count, smesh.interior_count))
        for term in expr["terms"]:
            out += _sample_sinusoid_term(term, smesh, tmesh)
        return out
    if kind == "csv":
        arr, t_read, x_read = read_field_csv(expr["path"])
        if arr.shape != (tmesh.step_count, smesh.interior_count):
            raise ValueError(
                f"forcing CSV grid {arr.shape} does not match meshes "
                f"({tmesh.step_count}, {smesh.interior_count})"
            )
        if not (
            np.allclose(t_read, tmesh.times, atol=1e-12)
            and np.allclose(x_read, smesh.nodes, atol=1e-12)
        ):
            raise ValueError("forcing CSV coordinates do not match the meshes")
        return arr
    raise ValueError(f"unknown forcing kind {kind!r}")


# ---------------------------------------------------------------------------
# file formats: CSV with header t,x,value (row-major by time slice) and a
# gnuplot-ready .dat mirror. Floats carry 17 significant digits so that a
# round trip is bit exact.

_FMT = "%.17g"


def write_field_csv(
    path: str, values: np.ndarray, smesh: SpatialMesh, tmesh: TemporalMesh
) -> None:
    values = validate_trajectory(values, smesh, tmesh, "field")
    x = smesh.nodes
    t = tmesh.times
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x", "value"])
        for n in range(tmesh.step_count):
            tn = _FMT % t[n]
            for i in range(smesh.interior_count):
                writer.writerow([tn, _FMT % x[i], _FMT % values[n, i]])


def read_field_csv(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a t,x,value grid file; returns (values (N, M), times, nodes)."""
    ts: list[float] = []
    xs: list[float] = []
    vals: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["t", "x", "value"]:
            raise ValueError(f"bad field CSV header {header!r} in {path}")
        for row in reader:
            if not row:
                continue
            ts.append(float(row[0]))
            xs.append(float(row[1]))
            vals.append(float(row[2]))
    t_unique = np.unique(ts)
    x_unique = np.unique(xs)
    n, m = len(t_unique), len(x_unique)
    if n * m != len(vals):
        raise ValueError(f"field CSV {path} is not a full grid")
    arr = np.asarray(vals, dtype=float).reshape(n, m)
    return arr, t_unique, x_unique


def write_field_dat(
    path: str, values: np.ndarray, smesh: SpatialMesh, tmesh: TemporalMesh
) -> None:
    """Gnuplot mirror: blank-line separated time blocks, columns t x value."""
    values = validate_trajectory(values, smesh, tmesh, "field")
    x = smesh.nodes
    t = tmesh.times
    lines = ["# t x value"]
    for n in range(tmesh.step_count):
        tn = _FMT % t[n]
        for i in range(smesh.interior_count):
            lines.append(f"{tn} {_FMT % x[i]} {_FMT % values[n, i]}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
