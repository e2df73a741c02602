"""Space-time objective for the regularized periodic problem and its solver.

One periodic stage fixes the total forcing (given forcing plus dual update)
and minimizes, over periodic trajectories, the strictly convex functional

    sum_n dt [ eps Psi(du_n) + eps Psi(u_n) + Phi(u_n)
               + (eps/2) |u_n|_V^2 - <(f+h)_n, u_n> ]

where du is the backward difference with periodic wrap, Psi the nodal
primitive integral, and Phi either the smoothed gradient energy or its
proximal envelope.  The gradient slice reproduces the discrete Euler
equation, so stationarity equals solving the stage system.

The minimizer is a damped Newton method on the flattened trajectory with a
cyclic block-tridiagonal sparse Hessian, Armijo backtracking on the exact
objective, and a steepest-descent fallback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import convexcore as cc
from .discretize import (
    ProblemSpec,
    bochner_norm,
    norm_V,
    norm_Vstar,
    pairing,
    time_derivative,
    validate_trajectory,
)

__all__ = [
    "ObjectiveConfig",
    "MinimizerReport",
    "assemble_objective",
    "objective_gradient",
    "minimize",
    "residual_AP",
    "stage_residual",
]


@dataclass
class ObjectiveConfig:
    """Frozen data of one periodic stage minimization.

    f_plus_h is the combined forcing trajectory of shape (N, M).  epsilon
    may be zero, which drops the time coupling and the lower-order terms and
    decouples the slices.  lam > 0 with use_envelope swaps the gradient
    energy for its proximal envelope (value and gradient both); lam = 0 uses
    the smoothed energy directly.
    """

    prob: ProblemSpec
    epsilon: float
    lam: float
    use_envelope: bool
    f_plus_h: np.ndarray
    delta: float
    pf: cc.PerturbedFunctional | None = None
    envelope_tol: float = 1e-11

    def __post_init__(self) -> None:
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.use_envelope and self.lam == 0.0:
            raise ValueError("use_envelope requires lam > 0")
        self.f_plus_h = validate_trajectory(
            self.f_plus_h, self.prob.smesh, self.prob.tmesh, "combined forcing"
        )

    def phi_config(self) -> cc.PhiConfig:
        return cc.PhiConfig(
            a=self.prob.a,
            m=self.prob.m,
            delta=self.delta,
            smesh=self.prob.smesh,
            p=self.prob.p,
            pf=self.pf,
        )


@dataclass
class MinimizerReport:
    iterations: int
    final_gradient_norm: float
    objective_value: float
    line_search_failures: int
    converged: bool = True
    history: list = field(default_factory=list)


class _EnvelopeWorkspace:
    """Per-slice proximal solves with warm starts carried across calls."""

    def __init__(self, ocfg: ObjectiveConfig) -> None:
        self.cfg = ocfg.phi_config()
        self.lam = ocfg.lam
        self.tol = ocfg.envelope_tol
        self.warm: np.ndarray | None = None

    def values_grads(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        N = u.shape[0]
        J = np.empty_like(u)
        env = np.empty(N)
        ygrad = np.empty_like(u)
        for n in range(N):
            v0 = None if self.warm is None else self.warm[n]
            J[n], env[n], g = cc.moreau_yosida(
                u[n], self.lam, self.cfg, tol=self.tol, v0=v0
            )
            ygrad[n] = g  # envelope gradient F(u - J)/lam, as returned
        self.warm = J.copy()
        return J, env, ygrad


def _phi_terms(
    u: np.ndarray, ocfg: ObjectiveConfig, ws: _EnvelopeWorkspace | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slice energies, slice gradients, and the Hessian anchor points."""
    if ocfg.use_envelope:
        assert ws is not None
        J, env, ygrad = ws.values_grads(u)
        return env, ygrad, J
    cfg = ocfg.phi_config()
    val, grad = cc.phi_value_grad(u, cfg)
    return np.atleast_1d(val), grad, u


def _objective_pieces(
    u: np.ndarray, ocfg: ObjectiveConfig, ws: _EnvelopeWorkspace | None
) -> float:
    prob = ocfg.prob
    dt = prob.tmesh.dt
    eps = ocfg.epsilon
    phi_vals, _, _ = _phi_terms(u, ocfg, ws)
    total = float(np.sum(phi_vals))
    total -= float(np.sum(pairing(ocfg.f_plus_h, u, prob.smesh)))
    if eps > 0.0:
        du = time_derivative(u, prob.tmesh)
        total += eps * float(np.sum(cc.eval_psi(du, prob.nl, prob.smesh)))
        total += eps * float(np.sum(cc.eval_psi(u, prob.nl, prob.smesh)))
        total += 0.5 * eps * float(np.sum(norm_V(u, prob.p, prob.smesh) ** 2))
    return dt * total


def assemble_objective(u: np.ndarray, ocfg: ObjectiveConfig) -> float:
    """Objective value at a periodic trajectory (fresh envelope solves)."""
    u = validate_trajectory(u, ocfg.prob.smesh, ocfg.prob.tmesh, "trajectory")
    ws = _EnvelopeWorkspace(ocfg) if ocfg.use_envelope else None
    return _objective_pieces(u, ocfg, ws)


def _slice_residual(
    u: np.ndarray, ocfg: ObjectiveConfig, ws: _EnvelopeWorkspace | None
) -> tuple[np.ndarray, np.ndarray]:
    """Stage equation residual per slice and the Hessian anchor trajectory."""
    prob = ocfg.prob
    eps = ocfg.epsilon
    _, phi_grads, anchor = _phi_terms(u, ocfg, ws)
    R = phi_grads - ocfg.f_plus_h
    if eps > 0.0:
        du = time_derivative(u, prob.tmesh)
        xi = prob.nl.alpha_eval(du)
        R = R + eps * (xi - np.roll(xi, -1, axis=0)) / prob.tmesh.dt
        R = R + eps * prob.nl.alpha_eval(u)
        R = R + eps * cc.duality_map(u, prob.p, prob.smesh)
    return R, anchor


def objective_gradient(u: np.ndarray, ocfg: ObjectiveConfig) -> np.ndarray:
    """Pairing gradient of the objective: dt times the slice residual."""
    u = validate_trajectory(u, ocfg.prob.smesh, ocfg.prob.tmesh, "trajectory")
    ws = _EnvelopeWorkspace(ocfg) if ocfg.use_envelope else None
    R, _ = _slice_residual(u, ocfg, ws)
    return ocfg.prob.tmesh.dt * R


def _duality_diag(u: np.ndarray, p: float, delta: float, smesh) -> np.ndarray:
    """Diagonal part of the duality map Jacobian, slicewise, rank-one dropped."""
    if p == 2.0:
        return np.ones_like(u)
    nrm = np.asarray(norm_V(u, p, smesh))
    nrm = np.maximum(nrm, 1e-150)
    smooth = (u * u + delta * delta) ** ((p - 2.0) / 2.0)
    return (p - 1.0) * nrm[..., None] ** (2.0 - p) * smooth


def _assemble_hessian(
    u: np.ndarray, anchor: np.ndarray, ocfg: ObjectiveConfig
) -> sp.csr_matrix:
    """Cyclic block-tridiagonal Jacobian of the slice residual (symmetric)."""
    prob = ocfg.prob
    smesh, tmesh = prob.smesh, prob.tmesh
    N, M = u.shape
    dt, dx = tmesh.dt, smesh.dx
    eps = ocfg.epsilon
    delta = ocfg.delta

    w = cc.phi_hessian_cell_weights(anchor, prob.a, prob.m, delta, smesh)
    if ocfg.pf is not None and ocfg.pf.mu > 0.0:
        base = np.asarray(
            cc.eval_phi(anchor, prob.a, prob.m, delta, smesh)
        )
        w = (1.0 + ocfg.pf.mu * base**ocfg.pf.alpha_exp)[..., None] * w

    main = (w[:, :-1] + w[:, 1:]) / dx**2
    rows, cols, vals = [], [], []
    base_idx = np.arange(N * M).reshape(N, M)

    if eps > 0.0:
        du = time_derivative(u, tmesh)
        c = eps * prob.nl.alpha_derivative(du, delta) / dt**2
        main = main + c + np.roll(c, -1, axis=0)
        main = main + eps * prob.nl.alpha_derivative(u, delta)
        main = main + eps * _duality_diag(u, prob.p, delta, smesh)
        prev = np.roll(base_idx, 1, axis=0)
        rows.append(base_idx.ravel())
        cols.append(prev.ravel())
        vals.append(-c.ravel())
        rows.append(prev.ravel())
        cols.append(base_idx.ravel())
        vals.append(-c.ravel())

    rows.append(base_idx.ravel())
    cols.append(base_idx.ravel())
    vals.append(main.ravel())

    off = -w[:, 1:-1] / dx**2
    left = base_idx[:, :-1]
    right = base_idx[:, 1:]
    rows.append(left.ravel())
    cols.append(right.ravel())
    vals.append(off.ravel())
    rows.append(right.ravel())
    cols.append(left.ravel())
    vals.append(off.ravel())

    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N * M, N * M),
    )
    return H.tocsr()


def stage_residual(u: np.ndarray, ocfg: ObjectiveConfig) -> float:
    """Bochner dual norm of the stage equation residual (solver-facing)."""
    ws = _EnvelopeWorkspace(ocfg) if ocfg.use_envelope else None
    R, _ = _slice_residual(u, ocfg, ws)
    prob = ocfg.prob
    pc = prob.p_conj
    return float(
        bochner_norm(
            R, lambda s: norm_Vstar(s, pc, prob.smesh), pc, prob.tmesh
        )
    )


def minimize(
    u0: np.ndarray,
    ocfg: ObjectiveConfig,
    tol: float = 1e-10,
    max_iter: int = 80,
) -> tuple[np.ndarray, MinimizerReport]:
    """Newton descent to stationarity of the stage objective.

    Stops when the Bochner dual norm of the slice residual drops below
    tol * max(1, |f+h| in the same norm).  Returns the trajectory and a
    report; a non-converged report is returned rather than raising so the
    caller can decide.
    """
    prob = ocfg.prob
    u = validate_trajectory(u0, prob.smesh, prob.tmesh, "initial trajectory").copy()
    ws = _EnvelopeWorkspace(ocfg) if ocfg.use_envelope else None
    smesh, tmesh = prob.smesh, prob.tmesh
    pc = prob.p_conj

    def dual_res(R: np.ndarray) -> float:
        return float(
            bochner_norm(R, lambda s: norm_Vstar(s, pc, smesh), pc, tmesh)
        )

    def st_pair(A: np.ndarray, B: np.ndarray) -> float:
        return tmesh.dt * float(np.sum(pairing(A, B, smesh)))

    scale = max(1.0, dual_res(ocfg.f_plus_h))
    fv = _objective_pieces(u, ocfg, ws)
    R, anchor = _slice_residual(u, ocfg, ws)
    res = dual_res(R)
    failures = 0
    history = [res]
    it = 0
    for it in range(1, max_iter + 1):
        if res <= tol * scale:
            return u, MinimizerReport(it - 1, res, fv, failures, True, history)
        H = _assemble_hessian(u, anchor, ocfg)
        g = R.ravel()
        step = None
        shift = 0.0
        diag_mean = max(float(H.diagonal().mean()), 1e-12)
        for _ in range(6):
            try:
                Hs = H if shift == 0.0 else H + shift * sp.identity(H.shape[0])
                cand = spsolve(Hs.tocsc(), -g)
            except RuntimeError:
                cand = None
            if (
                cand is not None
                and np.all(np.isfinite(cand))
                and float(cand @ g) < 0.0
            ):
                step = cand.reshape(u.shape)
                break
            shift = diag_mean * 1e-8 if shift == 0.0 else shift * 100.0
        newton_ok = step is not None
        if not newton_ok:
            step = -R
        accepted = False
        updated = False
        # Below this, objective differences drown in float64 roundoff and the
        # Armijo test becomes meaningless; fall back to residual decrease.
        noise = 64.0 * np.finfo(float).eps * (abs(fv) + 1.0)
        for direction in (step, -R) if newton_ok else (step,):
            slope = st_pair(R, direction)
            blind = 1e-4 * abs(slope) <= noise
            if slope >= 0.0 and not blind:
                continue
            t = 1.0
            res_tries = 0
            while t > 1e-16 and res_tries < 3:
                trial = u + t * direction
                ft = _objective_pieces(trial, ocfg, ws)
                if not blind and ft <= fv + 1e-4 * t * slope:
                    u, fv = trial, ft
                    accepted = True
                    break
                if blind or 1e-4 * t * abs(slope) <= noise:
                    res_tries += 1
                    Rt, at = _slice_residual(trial, ocfg, ws)
                    rt = dual_res(Rt)
                    if rt < res:
                        u, fv = trial, ft
                        R, anchor, res = Rt, at, rt
                        updated = True
                        accepted = True
                        break
                t *= 0.5
            if accepted:
                break
            failures += 1
        if not accepted:
            return u, MinimizerReport(it, res, fv, failures, False, history)
        if not updated:
            R, anchor = _slice_residual(u, ocfg, ws)
            res = dual_res(R)
        history.append(res)
    converged = res <= tol * scale
    return u, MinimizerReport(max_iter, res, fv, failures, converged, history)


def residual_AP(
    u: np.ndarray,
    prob: ProblemSpec,
    delta: float = 0.0,
    pf: cc.PerturbedFunctional | None = None,
) -> float:
    """Bochner dual norm of the unregularized equation residual.

    Measures alpha(du) + eta - f with eta the (possibly perturbed) energy
    gradient at smoothing delta, in the p'-in-time V*-in-space norm.
    """
    u = validate_trajectory(u, prob.smesh, prob.tmesh, "trajectory")
    du = time_derivative(u, prob.tmesh)
    cfg = cc.PhiConfig(
        a=prob.a, m=prob.m, delta=delta, smesh=prob.smesh, p=prob.p, pf=pf
    )
    R = prob.nl.alpha_eval(du) + cc.phi_grad(u, cfg) - prob.f
    pc = prob.p_conj
    return float(
        bochner_norm(
            R, lambda s: norm_Vstar(s, pc, prob.smesh), pc, prob.tmesh
        )
    )
