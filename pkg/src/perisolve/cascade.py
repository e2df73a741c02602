"""Regularization cascade for the periodic doubly nonlinear problem.

The target system couples the rate nonlinearity and the gradient energy:
alpha(du) + grad Phi(u) = f with one period of self-consistency.  It is
attacked in layers:

* stage solve: for a frozen dual forcing h, minimize the strictly convex
  space-time objective of the elliptic-regularized system at parameter eps
  (optionally through a proximal-envelope schedule first);
* fixed point: update h toward -alpha(du) of the stage solution with a
  damped iteration wrapped in Anderson acceleration, restarting from the
  best iterate with halved damping whenever the residual blows past it;
* continuation: drive eps down a schedule with warm starts, finishing with
  an exact eps = 0 stage, and on the hard exponent branch drive a power
  perturbation of the energy down a mu schedule the same way.

A direct space-time Newton solve of the unregularized system is kept as an
independent oracle for cross-checking.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import convexcore as cc
from .discretize import (
    ProblemSpec,
    bochner_norm,
    norm_V,
    norm_Vstar,
    norm_X,
    pairing,
    time_derivative,
)
from .variational import (
    MinimizerReport,
    ObjectiveConfig,
    minimize,
    residual_AP,
)

__all__ = [
    "CascadeParams",
    "StageResult",
    "default_epsilon_schedule",
    "solve_APh",
    "beta_map",
    "fixed_point_solve",
    "epsilon_continuation",
    "mu_path",
    "solve_routed",
    "direct_newton_oracle",
    "energy_margin",
    "chain_rule_sum",
    "lf_margin",
    "stage_audit",
]

DEFAULT_MU_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4)

log = logging.getLogger(__name__)


def default_epsilon_schedule(
    start: float = 1.0, stop: float = 1e-4, factor: float = 0.5
) -> tuple[float, ...]:
    """Geometric ladder from start down to stop, clamping the last entry."""
    if not (0.0 < stop <= start and 0.0 < factor < 1.0):
        raise ValueError("need 0 < stop <= start and factor in (0, 1)")
    out = [start]
    while out[-1] * factor > stop * (1.0 + 1e-12):
        out.append(out[-1] * factor)
    if out[-1] > stop * (1.0 + 1e-12):
        out.append(stop)
    return tuple(out)


@dataclass(frozen=True)
class CascadeParams:
    """Tuning knobs of the cascade.

    stage_tol = None resolves to 0.05 * fp_tol so stage defects stay well
    under the fixed point tolerance.  exact_limit_stage appends a final
    eps = 0 (resp. mu = 0) solve after each schedule.  mu_eps_truncate is
    how many trailing epsilon entries later mu stages reuse; the first mu
    stage always walks the full ladder.
    """

    epsilon_schedule: tuple[float, ...] = default_epsilon_schedule()
    lambda_schedule: tuple[float, ...] = ()
    mu_schedule: tuple[float, ...] = ()
    alpha_exp: float | None = None
    delta: float = 1e-8
    fp_tol: float = 1e-10
    stage_tol: float | None = None
    max_fp_iter: int = 400
    anderson_depth: int = 64
    omega: float = 0.5
    omega_floor: float = 2.0**-20
    exact_limit_stage: bool = True
    max_newton: int = 80
    mu_eps_truncate: int = 4

    def __post_init__(self) -> None:
        eps = tuple(float(e) for e in self.epsilon_schedule)
        if any(e <= 0.0 for e in eps):
            raise ValueError("epsilon schedule entries must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilon schedule must be strictly decreasing")
        object.__setattr__(self, "epsilon_schedule", eps)
        lams = tuple(float(x) for x in self.lambda_schedule)
        if any(x <= 0.0 for x in lams):
            raise ValueError("lambda schedule entries must be positive")
        object.__setattr__(self, "lambda_schedule", lams)
        mus = tuple(float(x) for x in self.mu_schedule)
        if any(not (0.0 < x < 1.0) for x in mus):
            raise ValueError("mu schedule entries must lie in (0, 1)")
        if any(b >= a for a, b in zip(mus, mus[1:])):
            raise ValueError("mu schedule must be strictly decreasing")
        object.__setattr__(self, "mu_schedule", mus)
        if self.fp_tol <= 0.0:
            raise ValueError("fp_tol must be positive")
        if self.delta < 0.0:
            raise ValueError("delta must be >= 0")
        if not (0.0 < self.omega <= 1.0):
            raise ValueError("omega must lie in (0, 1]")

    def resolved_stage_tol(self) -> float:
        return 0.05 * self.fp_tol if self.stage_tol is None else self.stage_tol


@dataclass
class StageResult:
    """Solution of one fixed point stage plus its dual selections.

    xi = alpha(du) slicewise, eta the energy gradient at the stage smoothing
    (including the perturbation coefficient when present), h the converged
    dual forcing.  diagnostics is JSON-friendly throughout.
    """

    u: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    h: np.ndarray
    epsilon: float
    mu: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", False))


# ---------------------------------------------------------------------------
# single stage


def _dual_bochner(R: np.ndarray, prob: ProblemSpec) -> float:
    pc = prob.p_conj
    return float(
        bochner_norm(R, lambda s: norm_Vstar(s, pc, prob.smesh), pc, prob.tmesh)
    )


def solve_APh(
    prob: ProblemSpec,
    h: np.ndarray,
    eps: float,
    params: CascadeParams,
    pf: cc.PerturbedFunctional | None = None,
    u0: np.ndarray | None = None,
    stage_tol: float | None = None,
) -> tuple[np.ndarray, MinimizerReport]:
    """Solve the regularized stage system at frozen dual forcing h.

    Walks the proximal-envelope schedule first (if any), then the plain
    smoothed energy, each minimization warm-started from the previous.
    """
    u = np.zeros_like(prob.f) if u0 is None else u0
    fh = prob.f + h
    tol = params.resolved_stage_tol() if stage_tol is None else stage_tol
    rep = None
    for lam in params.lambda_schedule:
        ocfg = ObjectiveConfig(
            prob=prob,
            epsilon=eps,
            lam=lam,
            use_envelope=True,
            f_plus_h=fh,
            delta=params.delta,
            pf=pf,
            envelope_tol=min(1e-11, 0.1 * tol),
        )
        u, rep = minimize(u, ocfg, tol=max(tol, 1e-9), max_iter=params.max_newton)
    ocfg = ObjectiveConfig(
        prob=prob,
        epsilon=eps,
        lam=0.0,
        use_envelope=False,
        f_plus_h=fh,
        delta=params.delta,
        pf=pf,
    )
    u, rep = minimize(u, ocfg, tol=tol, max_iter=params.max_newton)
    return u, rep


def beta_map(
    prob: ProblemSpec,
    h: np.ndarray,
    eps: float,
    params: CascadeParams,
    pf: cc.PerturbedFunctional | None = None,
    u0: np.ndarray | None = None,
    stage_tol: float | None = None,
) -> tuple[np.ndarray, np.ndarray, MinimizerReport]:
    """Dual forcing update: solve the stage at h, return -alpha(du) with it."""
    u, rep = solve_APh(prob, h, eps, params, pf=pf, u0=u0, stage_tol=stage_tol)
    beta = -prob.nl.alpha_eval(time_derivative(u, prob.tmesh))
    return beta, u, rep


def fixed_point_solve(
    prob: ProblemSpec,
    eps: float,
    params: CascadeParams,
    pf: cc.PerturbedFunctional | None = None,
    h0: np.ndarray | None = None,
    u0: np.ndarray | None = None,
) -> StageResult:
    """Anderson-accelerated damped iteration on h = -alpha(du_h).

    The secant history is allowed to grow through transient residual
    increases (the update map is expansive at small eps, so early iterates
    overshoot before the subspace forms).  Only a blow-up far beyond the
    best iterate, or a long stretch without improvement, triggers a restart
    from the best iterate; blow-ups also halve the damping.  Non-convergence
    is reported, not raised.
    """
    h = np.zeros_like(prob.f) if h0 is None else np.asarray(h0, dtype=float).copy()
    scale = max(1.0, _dual_bochner(prob.f, prob))
    tol = params.fp_tol * scale
    # beta amplifies stage defects by the inverse time step, so the inner
    # solves must be tighter than fp_tol by that factor; near the target the
    # tolerance tightens further so beta noise cannot floor the iteration
    # just above tol
    st_tol_base = params.resolved_stage_tol() * min(1.0, prob.tmesh.dt)
    st_tol = st_tol_base
    omega = params.omega
    halvings = 0
    newton_iters = 0
    dh_hist: list[np.ndarray] = []
    dg_hist: list[np.ndarray] = []
    patience = max(min(3 * params.anderson_depth, 100), 15)

    bh, u, rep = beta_map(prob, h, eps, params, pf=pf, u0=u0, stage_tol=st_tol)
    newton_iters += rep.iterations
    g = bh - h
    res = _dual_bochner(g, prob)
    history = [res]
    best = {"res": res, "h": h.copy(), "g": g.copy(), "u": u.copy()}
    converged = res <= tol
    since_best = 0
    fruitless_restarts = 0

    for _ in range(params.max_fp_iter):
        if converged or fruitless_restarts >= 8:
            break
        st_tol = st_tol_base if best["res"] > 10.0 * tol else 0.02 * st_tol_base
        gf = g.ravel()
        h_next = h + omega * g
        if dh_hist and params.anderson_depth > 0:
            dG = np.stack(dg_hist, axis=1)
            dH = np.stack(dh_hist, axis=1)
            theta, *_ = np.linalg.lstsq(dG, gf, rcond=None)
            correction = (dH + omega * dG) @ theta
            h_next = h_next - correction.reshape(h.shape)
        bh_next, u_next, rep = beta_map(
            prob, h_next, eps, params, pf=pf, u0=u, stage_tol=st_tol
        )
        newton_iters += rep.iterations
        g_next = bh_next - h_next
        res_next = _dual_bochner(g_next, prob)
        history.append(res_next)
        # The update map can be strongly expansive at small eps, so the
        # accelerated iterates legitimately overshoot by orders of magnitude
        # while the secant subspace forms; only growth beyond the data scale
        # (or an absurd multiple of the best iterate) counts as divergence.
        blew_up = res_next > max(10.0 * scale, 1e3 * best["res"])
        if params.anderson_depth == 0:
            # plain damped iteration keeps the residual monotone: any
            # increase halves the damping instead of being tolerated
            blew_up = res_next > res
        stagnant = since_best >= patience
        if blew_up or stagnant:
            if blew_up:
                omega = max(0.5 * omega, params.omega_floor)
                halvings += 1
            dh_hist.clear()
            dg_hist.clear()
            h, g, u = best["h"].copy(), best["g"].copy(), best["u"].copy()
            res = best["res"]
            since_best = 0
            fruitless_restarts += 1
            continue
        dh_hist.append((h_next - h).ravel())
        dg_hist.append((g_next - g).ravel())
        while len(dh_hist) > params.anderson_depth:
            dh_hist.pop(0)
            dg_hist.pop(0)
        h, g, u, res = h_next, g_next, u_next, res_next
        if res < best["res"]:
            best = {"res": res, "h": h.copy(), "g": g.copy(), "u": u.copy()}
            since_best = 0
            fruitless_restarts = 0
        else:
            since_best += 1
        converged = res <= tol

    if not converged and best["res"] <= tol:
        converged = True
    h, u, res = best["h"], best["u"], best["res"]
    xi = prob.nl.alpha_eval(time_derivative(u, prob.tmesh))
    cfg = cc.PhiConfig(
        a=prob.a, m=prob.m, delta=params.delta, smesh=prob.smesh, p=prob.p, pf=pf
    )
    eta = cc.phi_grad(u, cfg)
    mu = 0.0 if pf is None else pf.mu
    diagnostics = {
        "converged": bool(converged),
        "fixed_point_residual": float(res),
        "residual_scale": float(scale),
        "residual_history": [float(r) for r in history],
        "beta_evaluations": len(history),
        "omega_final": float(omega),
        "omega_halvings": int(halvings),
        "stage_newton_iterations": int(newton_iters),
        "energy_margin": energy_margin(u, prob),
        "audit": stage_audit(u, h, prob, eps, params.delta, pf),
    }
    if not converged:
        log.warning(
            "fixed point at eps=%.3e mu=%.3e stalled at residual %.3e (tol %.3e)",
            eps,
            mu,
            res,
            tol,
        )
    return StageResult(u, xi, eta, h, float(eps), float(mu), diagnostics)


# ---------------------------------------------------------------------------
# invariants and audits


def energy_margin(u: np.ndarray, prob: ProblemSpec) -> float:
    """Periodic dissipation pairing sum_n dt <f_n - alpha(du_n), du_n>.

    Nonnegative up to the stage defect for any solution: the energy gradient
    pairs with du above the telescoping energy increments, which cancel over
    one period.
    """
    du = time_derivative(u, prob.tmesh)
    xi = prob.nl.alpha_eval(du)
    vals = pairing(prob.f - xi, du, prob.smesh)
    return float(prob.tmesh.dt * np.sum(vals))


def chain_rule_sum(u: np.ndarray, prob: ProblemSpec, delta: float = 0.0) -> float:
    """sum_n dt <eta_n, du_n> with eta the energy gradient.

    Equals the sum of per-step convexity gaps of the energy, hence is
    nonnegative and of size O(dt) for smooth trajectories.
    """
    du = time_derivative(u, prob.tmesh)
    eta = cc.grad_phi(u, prob.a, prob.m, delta, prob.smesh)
    return float(prob.tmesh.dt * np.sum(pairing(eta, du, prob.smesh)))


def lf_margin(u: np.ndarray, prob: ProblemSpec) -> float:
    """Worst-window margin of the dual flow inequality.

    With xi_n = alpha(du_n), every window (n1, n2] satisfies
    sum <xi_n - xi_{n-1}, du_n> >= psi*(xi_{n2}) - psi*(xi_{n1}): du_n is a
    subgradient of psi* at xi_n, so each per-step defect is a Fenchel-Young
    gap and nonnegative.  Returns the smallest window sum of the defects
    (windows wrap around the period), nonnegative up to roundoff.
    """
    du = time_derivative(u, prob.tmesh)
    xi = prob.nl.alpha_eval(du)
    psis = cc.fenchel_psi_star(xi, prob.nl, prob.smesh)
    lhs = pairing(xi - np.roll(xi, 1, axis=0), du, prob.smesh)
    d = np.asarray(lhs - (psis - np.roll(psis, 1)), dtype=float)
    # exact minimum over all nonempty circular windows via doubled prefix
    # sums; N is small enough that the quadratic sweep is immaterial
    N = d.size
    cs = np.concatenate(([0.0], np.cumsum(np.concatenate([d, d]))))
    starts = np.arange(N)
    worst = np.inf
    for length in range(1, N + 1):
        worst = min(worst, float(np.min(cs[starts + length] - cs[starts])))
    return worst


def stage_audit(
    u: np.ndarray,
    h: np.ndarray,
    prob: ProblemSpec,
    eps: float,
    delta: float,
    pf: cc.PerturbedFunctional | None = None,
) -> dict:
    """A priori quantities tracked along the continuation.

    The eps-weighted groups must stay bounded as eps decreases; the
    unweighted state energy and dual integrals must stay bounded on their
    own.  Gradient dual norms in the second-space scale are measured in the
    nodal dual norm (a surrogate for the gradient-space dual).
    """
    smesh, tmesh = prob.smesh, prob.tmesh
    dt = tmesh.dt
    p, pc, m = prob.p, prob.p_conj, prob.m
    mc = m / (m - 1.0)
    du = time_derivative(u, tmesh)
    xi = prob.nl.alpha_eval(du)
    cfg = cc.PhiConfig(a=prob.a, m=m, delta=delta, smesh=smesh, p=p, pf=pf)
    eta = cc.phi_grad(u, cfg)
    rate_p = float(dt * np.sum(norm_V(du, p, smesh) ** p))
    rate_dual = float(dt * np.sum(norm_Vstar(xi, pc, smesh) ** pc))
    rate_primitive = float(dt * np.sum(cc.eval_psi(du, prob.nl, smesh)))
    state_energy = float(dt * np.sum(norm_X(u, m, smesh) ** m))
    state_p = float(dt * np.sum(norm_V(u, p, smesh) ** p))
    state_sq = float(dt * np.sum(norm_V(u, 2.0, smesh) ** 2))
    eta_dual = float(dt * np.sum(norm_Vstar(eta, mc, smesh) ** mc))
    psi_grad_dual = float(
        dt * np.sum(norm_Vstar(prob.nl.alpha_eval(u), pc, smesh) ** pc)
    )
    audit = {
        "eps_rate_group": eps * (rate_p + rate_dual + rate_primitive),
        "rate_p_integral": rate_p,
        "rate_dual_integral": rate_dual,
        "rate_primitive_integral": rate_primitive,
        "state_energy_integral": state_energy,
        "eps_state_p": eps * state_p,
        "eps_state_sq": eps * state_sq,
        "eta_dual_integral": eta_dual,
        "psi_grad_dual_integral": psi_grad_dual,
        "h_dual_norm": _dual_bochner(h, prob),
    }
    if pf is not None and pf.mu > 0.0:
        base_cfg = cfg.without_perturbation()
        base_phi = np.asarray(cc.phi_value(u, base_cfg))
        coef = pf.mu * base_phi**pf.alpha_exp
        base_eta = cc.phi_grad(u, base_cfg)
        term = coef[..., None] * base_eta
        audit["mu_term_dual_norm"] = _dual_bochner(term, prob)
        audit["mu_phi_power_max"] = float(np.max(coef))
    return audit


# ---------------------------------------------------------------------------
# continuation paths


def epsilon_continuation(
    prob: ProblemSpec,
    params: CascadeParams,
    pf: cc.PerturbedFunctional | None = None,
    h0: np.ndarray | None = None,
    u0: np.ndarray | None = None,
    schedule: tuple[float, ...] | None = None,
) -> list[StageResult]:
    """Walk the epsilon ladder with warm starts; optionally end at eps = 0.

    A stage that stalls short of tolerance still hands its best iterate to
    the next stage (the failure stays recorded in its diagnostics); only a
    wild divergence aborts the walk and returns the partial list.  The walk
    also stops early once residual_AP stagnates below the stage tolerance:
    the attainable residual is floor-limited, and further epsilon stages
    add nothing the exact-limit stage would not.
    """
    sched = params.epsilon_schedule if schedule is None else tuple(schedule)
    stages: list[StageResult] = []
    h, u = h0, u0
    prev_ap = None
    for eps in sched:
        t0 = time.perf_counter()
        stage = fixed_point_solve(prob, eps, params, pf=pf, h0=h, u0=u)
        stage.diagnostics["wall_time"] = time.perf_counter() - t0
        stage.diagnostics["residual_AP"] = residual_AP(
            stage.u, prob, delta=params.delta, pf=pf
        )
        stages.append(stage)
        log.info(
            "eps=%.3e fp_res=%.3e ap_res=%.3e evals=%d",
            eps,
            stage.diagnostics["fixed_point_residual"],
            stage.diagnostics["residual_AP"],
            stage.diagnostics["beta_evaluations"],
        )
        diverged = stage.diagnostics["fixed_point_residual"] > stage.diagnostics[
            "residual_scale"
        ]
        if diverged:
            return stages
        h, u = stage.h, stage.u
        ap = stage.diagnostics["residual_AP"]
        stagnated = (
            prev_ap is not None
            and ap <= params.resolved_stage_tol()
            and ap > 0.5 * prev_ap
        )
        if stagnated:
            break
        prev_ap = ap
    if params.exact_limit_stage:
        t0 = time.perf_counter()
        stage = fixed_point_solve(prob, 0.0, params, pf=pf, h0=h, u0=u)
        stage.diagnostics["wall_time"] = time.perf_counter() - t0
        stage.diagnostics["residual_AP"] = residual_AP(
            stage.u, prob, delta=params.delta, pf=pf
        )
        stages.append(stage)
    return stages


def mu_path(
    prob: ProblemSpec,
    params: CascadeParams,
    h0: np.ndarray | None = None,
    u0: np.ndarray | None = None,
) -> list[StageResult]:
    """Continuation in the energy perturbation for the hard exponent branch.

    Intended for m <= p; running it with m > p is allowed as a consistency
    check against the plain path.  Needs a perturbation exponent with
    m (1 + alpha_exp) > p so the perturbed energy dominates the state norm.
    Each mu stage runs an epsilon continuation to its exact limit; later
    stages reuse only the tail of the epsilon ladder.  The final entry,
    when exact_limit_stage is set, is the mu = 0 solve.
    """
    if not params.mu_schedule:
        raise ValueError("mu_path needs a nonempty mu schedule")
    if params.alpha_exp is None:
        raise ValueError("mu_path needs alpha_exp")
    if prob.m * (1.0 + params.alpha_exp) <= prob.p:
        raise ValueError(
            "alpha_exp too small: need m (1 + alpha_exp) > p, got "
            f"m={prob.m}, alpha_exp={params.alpha_exp}, p={prob.p}"
        )
    results: list[StageResult] = []
    h, u = h0, u0
    tail = params.epsilon_schedule[-max(1, params.mu_eps_truncate):]
    for k, mu in enumerate(params.mu_schedule):
        pf = cc.PerturbedFunctional(mu, params.alpha_exp)
        sched = params.epsilon_schedule if k == 0 else tail
        stages = epsilon_continuation(prob, params, pf=pf, h0=h, u0=u, schedule=sched)
        final = stages[-1]
        final.diagnostics["epsilon_stage_count"] = len(stages)
        results.append(final)
        diverged = final.diagnostics["fixed_point_residual"] > final.diagnostics[
            "residual_scale"
        ]
        if diverged:
            return results
        h, u = final.h, final.u
    if params.exact_limit_stage:
        stages = epsilon_continuation(prob, params, pf=None, h0=h, u0=u, schedule=tail)
        final = stages[-1]
        final.diagnostics["epsilon_stage_count"] = len(stages)
        results.append(final)
    return results


def solve_routed(
    prob: ProblemSpec, params: CascadeParams, route: str = "auto"
) -> tuple[StageResult, list[StageResult], str]:
    """Dispatch to the appropriate continuation for the exponent pair.

    m > p runs the plain epsilon ladder; m <= p takes the perturbation path,
    filling in a default mu schedule and a default exponent satisfying
    m (1 + alpha_exp) > p when the params leave them unset.  route="mu"
    forces the perturbation path even for m > p (consistency testing).
    Returns the final stage, all stages walked, and the route name.
    """
    if route not in ("auto", "mu"):
        raise ValueError(f"route must be 'auto' or 'mu', got {route!r}")
    if route == "auto" and prob.m > prob.p:
        stages = epsilon_continuation(prob, params)
        return stages[-1], stages, "plain"
    if not params.mu_schedule:
        params = replace(params, mu_schedule=DEFAULT_MU_SCHEDULE)
    if params.alpha_exp is None:
        params = replace(params, alpha_exp=max(prob.p / prob.m - 1.0, 0.0) + 0.5)
    stages = mu_path(prob, params)
    return stages[-1], stages, "mu"


# ---------------------------------------------------------------------------
# independent oracle


def direct_newton_oracle(
    prob: ProblemSpec,
    delta: float = 0.0,
    u0: np.ndarray | None = None,
    tol: float = 1e-11,
    max_iter: int = 100,
) -> tuple[np.ndarray, dict]:
    """Damped Newton on the unregularized space-time system.

    Solves alpha(du_n) + grad Phi(u_n) = f_n directly on the cyclic
    block-bidiagonal Jacobian.  Independent of the cascade machinery except
    for the shared discrete operators; linear problems finish in one step.
    """
    smesh, tmesh = prob.smesh, prob.tmesh
    N, M = tmesh.step_count, smesh.interior_count
    dt = tmesh.dt
    u = np.zeros((N, M)) if u0 is None else np.asarray(u0, dtype=float).copy()
    scale = max(1.0, _dual_bochner(prob.f, prob))
    jac_delta = delta if delta > 0.0 else (1e-12 if prob.p < 2.0 else 0.0)

    def residual(v: np.ndarray) -> np.ndarray:
        dv = time_derivative(v, tmesh)
        return (
            prob.nl.alpha_eval(dv)
            + cc.grad_phi(v, prob.a, prob.m, delta, smesh)
            - prob.f
        )

    R = residual(u)
    res = _dual_bochner(R, prob)
    iters = 0
    base_idx = np.arange(N * M).reshape(N, M)
    for iters in range(1, max_iter + 1):
        if res <= tol * scale:
            break
        du = time_derivative(u, tmesh)
        ad = prob.nl.alpha_derivative(du, jac_delta) / dt
        w = cc.phi_hessian_cell_weights(u, prob.a, prob.m, delta, smesh)
        main = ad + (w[:, :-1] + w[:, 1:]) / smesh.dx**2
        rows = [base_idx.ravel()]
        cols = [base_idx.ravel()]
        vals = [main.ravel()]
        prev = np.roll(base_idx, 1, axis=0)
        rows.append(base_idx.ravel())
        cols.append(prev.ravel())
        vals.append(-ad.ravel())
        off = -w[:, 1:-1] / smesh.dx**2
        rows.append(base_idx[:, :-1].ravel())
        cols.append(base_idx[:, 1:].ravel())
        vals.append(off.ravel())
        rows.append(base_idx[:, 1:].ravel())
        cols.append(base_idx[:, :-1].ravel())
        vals.append(off.ravel())
        J = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(N * M, N * M),
        ).tocsc()
        diag_mean = max(float(J.diagonal().mean()), 1e-12)
        step = None
        shift = 0.0
        for _ in range(6):
            Js = J if shift == 0.0 else J + shift * sp.identity(N * M)
            try:
                cand = spsolve(Js, -R.ravel())
            except RuntimeError:
                cand = None
            if cand is not None and np.all(np.isfinite(cand)):
                step = cand.reshape(N, M)
                break
            shift = diag_mean * 1e-8 if shift == 0.0 else shift * 100.0
        if step is None:
            break
        t = 1.0
        accepted = False
        while t > 1e-16:
            trial = u + t * step
            Rt = residual(trial)
            rt = _dual_bochner(Rt, prob)
            if rt <= (1.0 - 1e-4 * t) * res:
                u, R, res = trial, Rt, rt
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    report = {
        "iterations": iters,
        "residual": float(res),
        "converged": bool(res <= tol * scale),
    }
    return u, report
