"""Scalar nonlinearities and the discrete convex-analysis toolkit.

Houses the rate nonlinearity (a nondecreasing scalar map with its primitive
and conjugate), the cellwise diffusion coefficient, gradient-energy
functionals and their gradients, duality maps of the nodal L^r spaces,
proximal smoothing (envelope, resolvent, Yosida gradient), and the
power-perturbed energy used on the hard exponent branch.

Gradients are always understood against the pairing <xi, u> = sum_i dx xi_i u_i,
so a "dual field" returned here pairs with increments through that weighted
sum.  All operations are pure functions; every value object is immutable
after construction and safe to share across concurrent solves.

Field arguments accept a single slice of shape (M,) or a stack (..., M); the
math is applied along the last axis and scalar outputs become arrays over the
leading axes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .discretize import SpatialMesh, cell_gradient, norm_V, norm_Vstar, pairing

__all__ = [
    "Nonlinearity",
    "DiffusionField",
    "PerturbedFunctional",
    "PhiConfig",
    "eval_psi",
    "grad_psi",
    "eval_phi",
    "grad_phi",
    "phi_hessian_cell_weights",
    "phi_hessian_matrix",
    "duality_map",
    "moreau_yosida",
    "fenchel_psi_star",
    "phi_power_eval_grad",
    "resolvent_phi_power",
    "phi_value",
    "phi_grad",
    "phi_value_grad",
]

_BRACKET_LIMIT = 1e8


def _require_finite(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# rate nonlinearity


class Nonlinearity:
    """Nondecreasing scalar map alpha with primitive A and conjugate A*.

    Three kinds are supported: "power" (alpha(s) = |s|^(p-2) s, everything in
    closed form), "piecewise_linear" (knot list, exact segment integrals,
    numerically maximized conjugate), and "custom_tabulated" (same machinery,
    data read from a two-column file).  Piecewise kinds extend beyond their
    end knots with the end segment slopes; at a knot the derivative takes the
    left segment's slope, a single-valued selection.

    p_exponent is the growth exponent used by the norm bookkeeping.
    """

    def __init__(
        self,
        kind: str,
        p_exponent: float,
        knots: np.ndarray | None = None,
        values: np.ndarray | None = None,
    ) -> None:
        if p_exponent <= 1.0:
            raise ValueError(f"p_exponent must exceed 1, got {p_exponent}")
        if kind not in ("power", "piecewise_linear", "custom_tabulated"):
            raise ValueError(f"unknown nonlinearity kind {kind!r}")
        self.kind = kind
        self.p_exponent = float(p_exponent)
        if kind == "power":
            self._knots = None
            self._values = None
            self._cum = None
        else:
            knots = _require_finite(knots, "nonlinearity knots")
            values = _require_finite(values, "nonlinearity values")
            if knots.ndim != 1 or knots.size < 2 or values.shape != knots.shape:
                raise ValueError("need >= 2 breakpoints of matching shape")
            if np.any(np.diff(knots) <= 0):
                raise ValueError("breakpoint arguments must be strictly increasing")
            if np.any(np.diff(values) < -1e-14 * max(1.0, np.abs(values).max())):
                raise ValueError("nonlinearity values must be nondecreasing")
            self._knots = knots
            self._values = values
            seg = np.diff(knots)
            self._slopes = np.diff(values) / seg
            # exact integral of the interpolant, accumulated from the first knot
            self._cum = np.concatenate(
                ([0.0], np.cumsum(0.5 * (values[:-1] + values[1:]) * seg))
            )
            self._A_at_zero = self._raw_integral(np.asarray(0.0))

    # -- constructors

    @classmethod
    def power(cls, p: float) -> "Nonlinearity":
        return cls("power", p)

    @classmethod
    def piecewise_linear(
        cls, breakpoints: "np.ndarray | list", p_exponent: float = 2.0
    ) -> "Nonlinearity":
        pts = np.asarray(breakpoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("breakpoints must be an (n, 2) array of (s, alpha(s))")
        return cls("piecewise_linear", p_exponent, pts[:, 0], pts[:, 1])

    @classmethod
    def custom_tabulated(
        cls, s_values, alpha_values, p_exponent: float = 2.0
    ) -> "Nonlinearity":
        return cls(
            "custom_tabulated",
            p_exponent,
            np.asarray(s_values, dtype=float),
            np.asarray(alpha_values, dtype=float),
        )

    @classmethod
    def from_csv(cls, path: str, p_exponent: float = 2.0) -> "Nonlinearity":
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls.custom_tabulated(data[:, 0], data[:, 1], p_exponent)

    # -- piecewise helpers

    def _segment_index(self, s: np.ndarray, side: str) -> np.ndarray:
        idx = np.searchsorted(self._knots, s, side=side) - 1
        return np.clip(idx, 0, self._knots.size - 2)

    def _raw_integral(self, s: np.ndarray) -> np.ndarray:
        idx = self._segment_index(s, "right")
        ds = s - self._knots[idx]
        return self._cum[idx] + self._values[idx] * ds + 0.5 * self._slopes[idx] * ds**2

    # -- scalar maps (vectorized)

    def alpha_eval(self, s) -> np.ndarray:
        s = _require_finite(s, "nonlinearity argument")
        if self.kind == "power":
            q = self.p_exponent - 1.0
            return np.sign(s) * np.abs(s) ** q
        idx = self._segment_index(s, "right")
        return self._values[idx] + self._slopes[idx] * (s - self._knots[idx])

    def primitive_A(self, s) -> np.ndarray:
        s = _require_finite(s, "nonlinearity argument")
        if self.kind == "power":
            return np.abs(s) ** self.p_exponent / self.p_exponent
        return self._raw_integral(s) - self._A_at_zero

    def conjugate_Astar(self, xi) -> np.ndarray:
        xi = _require_finite(xi, "conjugate argument")
        if self.kind == "power":
            pc = self.p_exponent / (self.p_exponent - 1.0)
            return np.abs(xi) ** pc / pc
        out = np.empty(np.shape(xi))
        flat = np.atleast_1d(np.asarray(xi, dtype=float)).ravel()
        vals = [self._conjugate_scalar(x) for x in flat]
        out = np.asarray(vals).reshape(np.shape(xi))
        return out if out.ndim else float(out)

    def alpha_derivative(self, s, delta: float = 0.0) -> np.ndarray:
        """Slope of alpha, smoothed near 0 for power kinds when delta > 0."""
        s = _require_finite(s, "nonlinearity argument")
        if self.kind == "power":
            q = self.p_exponent - 2.0
            if delta > 0.0:
                return (self.p_exponent - 1.0) * (s * s + delta * delta) ** (q / 2.0)
            return (self.p_exponent - 1.0) * np.abs(s) ** q
        idx = self._segment_index(s, "left")
        return self._slopes[idx] + np.zeros_like(np.asarray(s, dtype=float))

    def _conjugate_scalar(self, xi: float) -> float:
        """sup_s (xi*s - A(s)) by bounded maximization of a concave profile."""
        lo, hi = -1.0, 1.0
        clipped = False
        while float(self.alpha_eval(hi)) < xi:
            hi *= 2.0
            if hi > _BRACKET_LIMIT:
                clipped = True
                break
        while float(self.alpha_eval(lo)) > xi:
            lo *= 2.0
            if lo < -_BRACKET_LIMIT:
                clipped = True
                break
        if clipped:
            warnings.warn(
                "conjugate argument outside the range of alpha; "
                "supremum evaluated over a clipped bracket",
                RuntimeWarning,
                stacklevel=3,
            )
        res = minimize_scalar(
            lambda s: float(self.primitive_A(s)) - xi * s,
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12 * max(1.0, abs(hi), abs(lo))},
        )
        best = -float(res.fun)
        # bounded search can stall a hair off the ends; the ends are free
        for s_end in (lo, hi):
            best = max(best, xi * s_end - float(self.primitive_A(s_end)))
        return best

    def growth_constants(self, samples) -> dict:
        """Empirically realized constants of the coercivity/growth envelope.

        Returns the largest c with c|s|^p - 1/c <= A(s) on the samples and
        the smallest C with |alpha(s)|^(p') <= C(|s|^p + 1).
        """
        s = _require_finite(samples, "samples")
        p = self.p_exponent
        pc = p / (p - 1.0)
        a_vals = self.primitive_A(s)
        nz = np.abs(s) > 0
        sp = np.abs(s[nz]) ** p
        c_per = (a_vals[nz] + np.sqrt(a_vals[nz] ** 2 + 4.0 * sp)) / (2.0 * sp)
        c_lower = float(np.min(c_per)) if c_per.size else math.inf
        ratio = np.abs(self.alpha_eval(s)) ** pc / (np.abs(s) ** p + 1.0)
        return {"c_lower": c_lower, "C_upper": float(np.max(ratio))}


# ---------------------------------------------------------------------------
# diffusion coefficient


@dataclass(frozen=True)
class DiffusionField:
    """Cellwise diffusion coefficient with uniform positive bounds."""

    midpoint_values: np.ndarray
    lower_bound: float
    upper_bound: float

    def __post_init__(self) -> None:
        vals = _require_finite(self.midpoint_values, "diffusion values")
        object.__setattr__(self, "midpoint_values", vals)
        if not self.lower_bound > 0.0:
            raise ValueError(f"lower bound must be positive, got {self.lower_bound}")
        slack = 1e-12 * max(1.0, self.upper_bound)
        if np.any(vals < self.lower_bound - slack) or np.any(
            vals > self.upper_bound + slack
        ):
            raise ValueError("diffusion values violate the stated bounds")

    @classmethod
    def constant(cls, value: float, smesh: SpatialMesh) -> "DiffusionField":
        vals = np.full(smesh.interior_count + 1, float(value))
        return cls(vals, float(value), float(value))

    @classmethod
    def from_function(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        smesh: SpatialMesh,
        lower_bound: float | None = None,
        upper_bound: float | None = None,
    ) -> "DiffusionField":
        vals = np.asarray(fn(smesh.cell_midpoints), dtype=float)
        lo = float(np.min(vals)) if lower_bound is None else lower_bound
        hi = float(np.max(vals)) if upper_bound is None else upper_bound
        return cls(vals, lo, hi)


@dataclass(frozen=True)
class PerturbedFunctional:
    """Power perturbation of the gradient energy: phi + mu/(1+a) * phi^(1+a).

    The endpoints are both admitted: mu = 0 reduces every operation to the
    unperturbed energy (the resolvent then collapses to the plain one) and
    mu = 1 appears in scalar reference computations.  Continuation schedules
    keep their entries strictly inside (0, 1).
    """

    mu: float
    alpha_exp: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")
        if not self.alpha_exp > 0.0:
            raise ValueError(f"alpha_exp must be positive, got {self.alpha_exp}")


@dataclass(frozen=True)
class PhiConfig:
    """Everything needed to evaluate the gradient energy on a mesh.

    Bundles the diffusion field, energy exponent m, gradient smoothing delta,
    the mesh, the state-norm exponent p (for duality maps and prox metrics),
    and an optional power perturbation applied on top of the base energy.
    """

    a: DiffusionField
    m: float
    delta: float
    smesh: SpatialMesh
    p: float = 2.0
    pf: PerturbedFunctional | None = None

    def __post_init__(self) -> None:
        if self.m <= 1.0:
            raise ValueError(f"energy exponent m must exceed 1, got {self.m}")
        if self.delta < 0.0:
            raise ValueError(f"smoothing delta must be >= 0, got {self.delta}")
        if self.p <= 1.0:
            raise ValueError(f"norm exponent p must exceed 1, got {self.p}")

    def without_perturbation(self) -> "PhiConfig":
        return replace(self, pf=None) if self.pf is not None else self


# ---------------------------------------------------------------------------
# integral functionals and gradients


def eval_psi(u: np.ndarray, nl: Nonlinearity, mesh: SpatialMesh):
    """Nodal integral of the primitive: sum_i dx A(u_i). Convex in u."""
    u = _require_finite(u, "field")
    return mesh.dx * np.sum(nl.primitive_A(u), axis=-1)


def grad_psi(u: np.ndarray, nl: Nonlinearity, mesh: SpatialMesh) -> np.ndarray:
    """Pointwise alpha(u_i): the pairing gradient of eval_psi."""
    u = _require_finite(u, "field")
    return nl.alpha_eval(u)


def _q_delta(z: np.ndarray, m: float, delta: float) -> np.ndarray:
    if delta > 0.0:
        return (z * z + delta * delta) ** ((m - 2.0) / 2.0) * z
    return np.abs(z) ** (m - 2.0) * z if m != 2.0 else z


def _q_delta_prime(z: np.ndarray, m: float, delta: float) -> np.ndarray:
    if delta > 0.0:
        s2 = z * z + delta * delta
        return s2 ** ((m - 4.0) / 2.0) * ((m - 1.0) * z * z + delta * delta)
    return (m - 1.0) * np.abs(z) ** (m - 2.0)


def eval_phi(
    u: np.ndarray, a: DiffusionField, m: float, delta: float, mesh: SpatialMesh
):
    """Smoothed gradient energy (1/m) sum_cells dx a ((Du)^2 + delta^2)^(m/2).

    delta = 0 gives the exact discrete functional.  Convex in u for every
    delta >= 0.
    """
    if m <= 1.0:
        raise ValueError(f"energy exponent m must exceed 1, got {m}")
    u = _require_finite(u, "field")
    du = cell_gradient(u, mesh)
    dens = (du * du + delta * delta) ** (m / 2.0)
    return (mesh.dx / m) * np.sum(a.midpoint_values * dens, axis=-1)


def grad_phi(
    u: np.ndarray, a: DiffusionField, m: float, delta: float, mesh: SpatialMesh
) -> np.ndarray:
    """Negative discrete weighted nonlinear Laplacian; the pairing gradient
    of eval_phi at the same delta."""
    if m <= 1.0:
        raise ValueError(f"energy exponent m must exceed 1, got {m}")
    u = _require_finite(u, "field")
    du = cell_gradient(u, mesh)
    if delta == 0.0 and m < 2.0 and np.any(du == 0.0):
        raise FloatingPointError(
            "zero gradient cell with m < 2 and delta = 0: flux slope is singular"
        )
    flux = a.midpoint_values * _q_delta(du, m, delta)
    return -np.diff(flux, axis=-1) / mesh.dx


def phi_hessian_cell_weights(
    u: np.ndarray, a: DiffusionField, m: float, delta: float, mesh: SpatialMesh
) -> np.ndarray:
    """Cell weights a * q'(Du) of the energy Hessian, shape (..., M+1).

    The (pairing) Hessian is tridiagonal: diag (w_k + w_{k+1})/dx^2 and
    off-diagonal -w_{k+1}/dx^2.
    """
    du = cell_gradient(u, mesh)
    return a.midpoint_values * _q_delta_prime(du, m, delta)


def phi_hessian_matrix(
    u: np.ndarray, a: DiffusionField, m: float, delta: float, mesh: SpatialMesh
) -> np.ndarray:
    """Dense (M, M) pairing Hessian of the smoothed energy at a single slice."""
    w = phi_hessian_cell_weights(u, a, m, delta, mesh)
    if w.ndim != 1:
        raise ValueError("expected a single slice")
    M = mesh.interior_count
    H = np.zeros((M, M))
    idx = np.arange(M)
    H[idx, idx] = (w[:-1] + w[1:]) / mesh.dx**2
    off = -w[1:-1] / mesh.dx**2
    H[idx[:-1], idx[:-1] + 1] = off
    H[idx[:-1] + 1, idx[:-1]] = off
    return H


# ---------------------------------------------------------------------------
# duality map


def duality_map(v: np.ndarray, r: float, mesh: SpatialMesh) -> np.ndarray:
    """Duality map of the nodal L^r space: F(v)_i = |v|^(2-r) |v_i|^(r-2) v_i.

    Satisfies <F(v), v> = |v|_r^2 and |F(v)|_{r'} = |v|_r exactly up to
    roundoff; F(0) = 0 by continuity.
    """
    if r <= 1.0:
        raise ValueError(f"exponent r must exceed 1, got {r}")
    v = _require_finite(v, "field")
    nrm = np.asarray(norm_V(v, r, mesh))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(v == 0.0, 0.0, np.abs(v) ** (r - 2.0) * v)
        out = np.where(nrm[..., None] == 0.0, 0.0, nrm[..., None] ** (2.0 - r) * g)
    return out


def _duality_hessian(
    w: np.ndarray, r: float, delta: float, mesh: SpatialMesh
) -> np.ndarray:
    """Dense smoothed Jacobian of the duality map at a single slice.

    Exact for r = 2 (identity).  Otherwise diagonal plus rank one, with the
    pointwise powers delta-smoothed; positive semidefiniteness can degrade
    marginally under smoothing, which the callers guard with line searches.
    """
    M = w.shape[-1]
    if r == 2.0:
        return np.eye(M)
    nrm = float(norm_V(w, r, mesh))
    if nrm < 1e-150:
        smooth = (w * w + delta * delta) ** ((r - 2.0) / 2.0)
        return (r - 1.0) * max(delta, 1e-150) ** (2.0 - r) * np.diag(smooth)
    smooth = (w * w + delta * delta) ** ((r - 2.0) / 2.0)
    g = smooth * w
    H = (r - 1.0) * nrm ** (2.0 - r) * np.diag(smooth)
    H += (2.0 - r) * nrm ** (2.0 - 2.0 * r) * mesh.dx * np.outer(g, g)
    return H


# ---------------------------------------------------------------------------
# perturbed energy dispatch


def phi_power_eval_grad(
    u: np.ndarray, pf: PerturbedFunctional, cfg: PhiConfig
) -> tuple:
    """Value and gradient of the power-perturbed energy.

    value = phi + mu/(1+a) phi^(1+a); grad = (1 + mu phi^a) grad_phi, sharing
    one phi evaluation so the chain-rule identity holds on the same
    arithmetic path.
    """
    base = eval_phi(u, cfg.a, cfg.m, cfg.delta, cfg.smesh)
    g = grad_phi(u, cfg.a, cfg.m, cfg.delta, cfg.smesh)
    coef = 1.0 + pf.mu * np.asarray(base) ** pf.alpha_exp
    value = base + pf.mu / (1.0 + pf.alpha_exp) * np.asarray(base) ** (
        1.0 + pf.alpha_exp
    )
    return value, np.asarray(coef)[..., None] * g if np.ndim(coef) else coef * g


def phi_value(u: np.ndarray, cfg: PhiConfig):
    if cfg.pf is None or cfg.pf.mu == 0.0:
        return eval_phi(u, cfg.a, cfg.m, cfg.delta, cfg.smesh)
    return phi_power_eval_grad(u, cfg.pf, cfg)[0]


def phi_grad(u: np.ndarray, cfg: PhiConfig) -> np.ndarray:
    if cfg.pf is None or cfg.pf.mu == 0.0:
        return grad_phi(u, cfg.a, cfg.m, cfg.delta, cfg.smesh)
    return phi_power_eval_grad(u, cfg.pf, cfg)[1]


def phi_value_grad(u: np.ndarray, cfg: PhiConfig) -> tuple:
    if cfg.pf is None or cfg.pf.mu == 0.0:
        return (
            eval_phi(u, cfg.a, cfg.m, cfg.delta, cfg.smesh),
            grad_phi(u, cfg.a, cfg.m, cfg.delta, cfg.smesh),
        )
    return phi_power_eval_grad(u, cfg.pf, cfg)


def _phi_hessian_dispatch(u: np.ndarray, cfg: PhiConfig) -> np.ndarray:
    """Slice Hessian of the (possibly perturbed) energy.

    For the perturbed energy only the scaled base term is kept; the rank-one
    correction mu a phi^(a-1) g g^T is dropped, which the outer line searches
    absorb.
    """
    H = phi_hessian_matrix(u, cfg.a, cfg.m, cfg.delta, cfg.smesh)
    if cfg.pf is not None and cfg.pf.mu > 0.0:
        base = float(eval_phi(u, cfg.a, cfg.m, cfg.delta, cfg.smesh))
        H = (1.0 + cfg.pf.mu * base**cfg.pf.alpha_exp) * H
    return H


# ---------------------------------------------------------------------------
# fenchel conjugate of the rate functional


def fenchel_psi_star(xi: np.ndarray, nl: Nonlinearity, mesh: SpatialMesh):
    """Nodal integral of the scalar conjugate: sum_i dx A*(xi_i)."""
    xi = _require_finite(xi, "dual field")
    return mesh.dx * np.sum(nl.conjugate_Astar(xi), axis=-1)


# ---------------------------------------------------------------------------
# spatial Newton minimizer (shared by envelope and resolvent solves)


def _newton_minimize_field(
    value_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    hess_fn: Callable[[np.ndarray], np.ndarray],
    v0: np.ndarray,
    mesh: SpatialMesh,
    dual_exponent: float,
    tol: float,
    max_iter: int = 200,
) -> tuple[np.ndarray, int, float, bool]:
    """Damped Newton descent on a convex field functional.

    Directions come from the (approximate) pairing Hessian with a Levenberg
    shift escalation; any non-descent direction falls back to steepest
    descent.  Armijo backtracking on the exact value guards every step;
    once the predicted decrease drops below float64 value noise the test is
    blind and acceptance falls back to a strict residual decrease.
    """
    v = np.array(v0, dtype=float)
    fv = float(value_fn(v))
    g = grad_fn(v)
    res = float(norm_Vstar(g, dual_exponent, mesh))
    for it in range(max_iter):
        if res <= tol:
            return v, it, res, True
        H = hess_fn(v)
        step = None
        shift = 0.0
        base = max(np.trace(H) / H.shape[0], 1e-12)
        for _ in range(6):
            try:
                cand = np.linalg.solve(H + shift * np.eye(H.shape[0]), -g)
            except np.linalg.LinAlgError:
                cand = None
            if cand is not None and pairing(g, cand, mesh) < 0.0:
                step = cand
                break
            shift = base * 1e-8 if shift == 0.0 else shift * 100.0
        if step is None:
            step = -g
        slope = float(pairing(g, step, mesh))
        noise = 64.0 * np.finfo(float).eps * (abs(fv) + 1.0)
        accepted = updated = False
        t = 1.0
        res_tries = 0
        while t > 1e-16 and res_tries < 3:
            trial = v + t * step
            ft = float(value_fn(trial))
            blind = 1e-4 * t * abs(slope) <= noise
            if not blind and ft <= fv + 1e-4 * t * slope:
                v, fv = trial, ft
                accepted = True
                break
            if blind:
                res_tries += 1
                gt = grad_fn(trial)
                rt = float(norm_Vstar(gt, dual_exponent, mesh))
                if rt < res:
                    v, fv, g, res = trial, ft, gt, rt
                    accepted = updated = True
                    break
            t *= 0.5
        if not accepted:
            return v, it, res, False
        if not updated:
            g = grad_fn(v)
            res = float(norm_Vstar(g, dual_exponent, mesh))
    return v, max_iter, res, res <= tol


# ---------------------------------------------------------------------------
# proximal smoothing


def moreau_yosida(
    u: np.ndarray,
    lam: float,
    cfg: PhiConfig,
    tol: float = 1e-10,
    max_iter: int = 200,
    v0: np.ndarray | None = None,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Resolvent, envelope value, and envelope gradient at parameter lam > 0.

    Solves argmin_v |u - v|^2_V / (2 lam) + phi(v), returns (J, envelope,
    envelope gradient -F(J - u)/lam).  The sandwich phi(J) <= envelope <=
    phi(u) holds up to the inner solve tolerance.
    """
    if lam <= 0.0:
        raise ValueError(f"envelope parameter must be positive, got {lam}")
    u = _require_finite(u, "field")
    mesh, p = cfg.smesh, cfg.p
    pc = p / (p - 1.0)

    def value(v: np.ndarray) -> float:
        return float(
            0.5 * norm_V(u - v, p, mesh) ** 2 / lam + phi_value(v, cfg)
        )

    def grad(v: np.ndarray) -> np.ndarray:
        return duality_map(v - u, p, mesh) / lam + phi_grad(v, cfg)

    def hess(v: np.ndarray) -> np.ndarray:
        return _duality_hessian(v - u, p, cfg.delta, mesh) / lam + _phi_hessian_dispatch(
            v, cfg
        )

    scale = max(1.0, float(norm_V(u, p, mesh)) / lam)
    start = u if v0 is None else v0
    J, _, res, ok = _newton_minimize_field(
        value, grad, hess, start, mesh, pc, tol * scale, max_iter
    )
    if not ok:
        raise RuntimeError(
            f"proximal solve stalled with stationarity residual {res:.3e}"
        )
    envelope = value(J)
    yosida = -duality_map(J - u, p, mesh) / lam
    return J, envelope, yosida


def resolvent_phi_power(
    w: np.ndarray,
    wstar: np.ndarray,
    pf: PerturbedFunctional,
    cfg: PhiConfig,
    tol: float = 1e-10,
) -> np.ndarray:
    """Solve F(u - w) + (1 + mu phi^a(u)) grad_phi(u) = w* by scalar bisection.

    The auxiliary problem with frozen factor (1 + lam) is a convex
    minimization; the map lam -> mu phi^a(u_lam) is nonincreasing, so
    g(lam) = mu phi^a(u_lam) - lam brackets its root on [0, mu phi^a(u_0)]
    and bisection drives the combined equation residual below tol.
    """
    w = _require_finite(w, "field")
    wstar = _require_finite(wstar, "dual field")
    base_cfg = cfg.without_perturbation()
    mesh, p = cfg.smesh, cfg.p
    pc = p / (p - 1.0)
    inner_tol = 0.1 * tol * max(1.0, float(norm_Vstar(wstar, pc, mesh)))

    def solve_aux(lam: float, v0: np.ndarray) -> np.ndarray:
        def value(v):
            return float(
                0.5 * norm_V(v - w, p, mesh) ** 2
                + (1.0 + lam) * phi_value(v, base_cfg)
                - pairing(wstar, v, mesh)
            )

        def grad(v):
            return (
                duality_map(v - w, p, mesh)
                + (1.0 + lam) * phi_grad(v, base_cfg)
                - wstar
            )

        def hess(v):
            return _duality_hessian(
                v - w, p, cfg.delta, mesh
            ) + (1.0 + lam) * _phi_hessian_dispatch(v, base_cfg)

        u, _, res, ok = _newton_minimize_field(
            value, grad, hess, v0, mesh, pc, inner_tol
        )
        if not ok:
            raise RuntimeError(
                f"auxiliary solve at lam={lam:.3e} stalled, residual {res:.3e}"
            )
        return u

    def mu_phi_pow(u: np.ndarray) -> float:
        return pf.mu * float(phi_value(u, base_cfg)) ** pf.alpha_exp

    def equation_residual(u: np.ndarray) -> float:
        lhs = (
            duality_map(u - w, p, mesh)
            + (1.0 + mu_phi_pow(u)) * phi_grad(u, base_cfg)
            - wstar
        )
        return float(norm_Vstar(lhs, pc, mesh))

    u_lo = solve_aux(0.0, w)
    if pf.mu == 0.0:
        return u_lo
    g_lo = mu_phi_pow(u_lo)
    if g_lo < -10.0 * inner_tol:
        raise RuntimeError(
            f"bracket violation: mu phi^a at lam=0 evaluated to {g_lo:.3e} < 0"
        )
    scale = max(1.0, float(norm_Vstar(wstar, pc, mesh)))
    if equation_residual(u_lo) <= tol * scale:
        return u_lo
    lo, hi = 0.0, g_lo
    u_hi = solve_aux(hi, u_lo)
    g_hi = mu_phi_pow(u_hi) - hi
    expand = 0
    while g_hi > 0.0 and expand < 60:
        # monotonicity makes this bracket sufficient; expansion only mops up
        # inner-solve noise
        lo, u_lo = hi, u_hi
        hi *= 2.0
        u_hi = solve_aux(hi, u_hi)
        g_hi = mu_phi_pow(u_hi) - hi
        expand += 1
    u_best, best_res = u_hi, equation_residual(u_hi)
    for _ in range(200):
        if best_res <= tol * scale:
            break
        mid = 0.5 * (lo + hi)
        u_mid = solve_aux(mid, u_best)
        g_mid = mu_phi_pow(u_mid) - mid
        res_mid = equation_residual(u_mid)
        if res_mid < best_res:
            u_best, best_res = u_mid, res_mid
        if g_mid > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    if best_res > tol * scale:
        raise RuntimeError(
            f"resolvent bisection stalled with residual {best_res:.3e}"
        )
    return u_best
