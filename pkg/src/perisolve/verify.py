"""Falsification harness: manufactured solutions, invariant suites,
structural-stability experiments, and growth-envelope audits.

Everything here either reconstructs a known answer and measures the distance
to it, or evaluates an inequality the solution must satisfy and reports the
margin.  Failures are data, not exceptions; only malformed inputs raise.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import sympy as sym

from . import convexcore as cc
from .cascade import (
    CascadeParams,
    StageResult,
    chain_rule_sum,
    energy_margin,
    lf_margin,
    solve_routed,
)
from .discretize import (
    ProblemSpec,
    SpatialMesh,
    TemporalMesh,
    bochner_norm,
    cell_gradient,
    norm_V,
    norm_Vstar,
    norm_X,
    pairing,
    time_derivative,
)
from .variational import residual_AP

__all__ = [
    "Table",
    "MmsSpec",
    "MoscoSequenceSpec",
    "mms_discrete",
    "mms_continuum",
    "named_exact_solution",
    "derived_forcing",
    "mms_run",
    "mms_temporal_order",
    "mms_spatial_order",
    "invariant_suite",
    "mosco_experiment",
    "growth_audit",
    "loglog_slope",
    "refit_problem",
]

log = logging.getLogger(__name__)

_FMT = "%.17g"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return _FMT % v
    return str(v)


@dataclass
class Table:
    """Column-named result table with CSV and gnuplot writers."""

    columns: list[str]
    rows: list[list] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(
                f"row width {len(values)} != column count {len(self.columns)}"
            )
        self.rows.append(list(values))

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.asarray([row[j] for row in self.rows])

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(v) for v in row])

    def to_dat(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# " + " ".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(" ".join(_fmt(v) for v in row) + "\n")

    def as_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "rows": [
                [v if not isinstance(v, (np.floating, np.integer)) else v.item() for v in row]
                for row in self.rows
            ],
            "meta": self.meta,
        }


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass
class MmsSpec:
    """A manufactured exact trajectory plus the recipe for its forcing.

    exact_u(t, x) must be vectorized in x, satisfy the period match
    exact_u(0, x) = exact_u(T, x), and vanish at both boundary ends.  mode
    "discrete_exact" builds the forcing with the solver's own discrete
    operators (recovery then is limited only by solver tolerance);
    "continuum" differentiates a symbolic expression, which reintroduces
    discretization error and supports order studies.
    """

    exact_u: Callable[[float, np.ndarray], np.ndarray]
    mode: str
    name: str = ""
    u_expr: object | None = None
    a_expr: object | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("discrete_exact", "continuum"):
            raise ValueError(f"unknown mms mode {self.mode!r}")
        if self.mode == "continuum" and self.u_expr is None:
            raise ValueError("continuum mode needs a symbolic expression")


def mms_discrete(exact_u, name: str = "") -> MmsSpec:
    return MmsSpec(exact_u=exact_u, mode="discrete_exact", name=name)


_T_SYM, _X_SYM = sym.symbols("t x", real=True)


def mms_continuum(u_expr, a_expr=None, name: str = "") -> MmsSpec:
    """Wrap a sympy expression in (t, x); a_expr defaults to 1."""
    fn = sym.lambdify((_T_SYM, _X_SYM), u_expr, "numpy")

    def exact(t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(fn(t, x), dtype=float), x.shape).copy()

    return MmsSpec(
        exact_u=exact, mode="continuum", name=name, u_expr=u_expr, a_expr=a_expr
    )


def named_exact_solution(name: str, L: float, T: float) -> MmsSpec:
    """Bundled exact solutions.

    "separable_bump": sin-profile with a positive time modulation, good for
    discrete-exact recovery (no identically zero slice).
    "separable_sin": sin(pi x/L) sin(2 pi t/T), the linear-instance order
    study solution.
    "steady_sin": time-independent sin profile for spatial order studies.
    "zero": the zero trajectory.
    """
    t, x = _T_SYM, _X_SYM
    if name == "separable_bump":
        expr = sym.sin(sym.pi * x / L) * (1 + sym.Rational(1, 2) * sym.sin(2 * sym.pi * t / T))
    elif name == "separable_sin":
        expr = sym.sin(sym.pi * x / L) * sym.sin(2 * sym.pi * t / T)
    elif name == "steady_sin":
        expr = sym.sin(sym.pi * x / L) + 0 * t
    elif name == "zero":
        expr = 0 * t * x
    else:
        raise ValueError(f"unknown exact solution {name!r}")
    spec = mms_continuum(expr, name=name)
    return spec


def sample_exact(mms: MmsSpec, smesh: SpatialMesh, tmesh: TemporalMesh) -> np.ndarray:
    x = smesh.nodes
    U = np.stack([mms.exact_u(float(tn), x) for tn in tmesh.times])
    return U


def derived_forcing(
    mms: MmsSpec, prob: ProblemSpec, delta: float
) -> np.ndarray:
    """Forcing that makes mms.exact_u the (discrete or continuum) solution."""
    smesh, tmesh = prob.smesh, prob.tmesh
    if mms.mode == "discrete_exact":
        U = sample_exact(mms, smesh, tmesh)
        dU = time_derivative(U, tmesh)
        return prob.nl.alpha_eval(dU) + cc.grad_phi(
            U, prob.a, prob.m, delta, smesh
        )
    t, x = _T_SYM, _X_SYM
    u = mms.u_expr
    a = mms.a_expr if mms.a_expr is not None else sym.Integer(1)
    ut = sym.diff(u, t)
    ux = sym.diff(u, x)
    p, m = prob.p, prob.m
    alpha_ut = ut if p == 2.0 else sym.Abs(ut) ** (p - 2) * ut
    flux = a * (sym.Abs(ux) ** (m - 2) * ux if m != 2.0 else ux)
    f_expr = alpha_ut - sym.diff(flux, x)
    fn = sym.lambdify((t, x), f_expr, "numpy")
    xg = smesh.nodes
    return np.stack(
        [
            np.broadcast_to(np.asarray(fn(float(tn), xg), dtype=float), xg.shape)
            for tn in tmesh.times
        ]
    )


def refit_problem(
    prob: ProblemSpec, M: int, N: int, f: np.ndarray
) -> ProblemSpec:
    """Same physics on a different grid with a new forcing trajectory."""
    smesh = SpatialMesh(prob.smesh.length, M)
    tmesh = TemporalMesh(prob.tmesh.period, N)
    a_vals = np.interp(
        smesh.cell_midpoints, prob.smesh.cell_midpoints, prob.a.midpoint_values
    )
    a = cc.DiffusionField(a_vals, prob.a.lower_bound, prob.a.upper_bound)
    return ProblemSpec(
        p=prob.p, m=prob.m, nl=prob.nl, a=a, f=f, smesh=smesh, tmesh=tmesh
    )


def _solve_level(
    mms: MmsSpec, prob: ProblemSpec, params: CascadeParams, M: int, N: int
) -> tuple[float, float, bool]:
    smesh = SpatialMesh(prob.smesh.length, M)
    tmesh = TemporalMesh(prob.tmesh.period, N)
    level_prob = refit_problem(
        prob, M, N, np.zeros((N, M))
    )
    f = derived_forcing(mms, level_prob, params.delta)
    level_prob = replace(level_prob, f=f)
    final, _, _ = solve_routed(level_prob, params)
    U = sample_exact(mms, smesh, tmesh)
    err = bochner_norm(
        final.u - U,
        lambda s: norm_V(s, level_prob.p, smesh),
        np.inf,
        tmesh,
    )
    res = residual_AP(final.u, level_prob, delta=params.delta)
    return float(err), float(res), final.converged


def mms_run(
    mms: MmsSpec,
    prob: ProblemSpec,
    params: CascadeParams,
    levels: tuple[tuple[int, int], ...] = ((8, 8), (16, 16), (32, 32)),
    jobs: int = 1,
) -> Table:
    """Solve the manufactured problem across refinement levels.

    Error column is the sup-in-time nodal L^p distance to the exact
    trajectory.  In discrete-exact mode the error is bounded by solver
    tolerance at every level; in continuum mode consecutive level ratios
    expose the convergence order (meta key "orders").
    """
    table = Table(["level", "M", "N", "error", "residual", "converged"])
    table.meta["mode"] = mms.mode
    table.meta["name"] = mms.name

    def work(args):
        lv, (M, N) = args
        return lv, M, N, *_solve_level(mms, prob, params, M, N)

    items = list(enumerate(levels))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]
    for lv, M, N, err, res, conv in results:
        table.add(lv, M, N, err, res, conv)
    errs = table.column("error").astype(float)
    if mms.mode == "continuum" and len(errs) > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            orders = np.log2(errs[:-1] / errs[1:])
        table.meta["orders"] = [float(o) for o in orders]
    return table


def mms_temporal_order(
    mms: MmsSpec,
    prob: ProblemSpec,
    params: CascadeParams,
    M: int = 8,
    Ns: tuple[int, ...] = (8, 16, 32),
    N_ref: int = 128,
) -> Table:
    """Self-convergence in dt against a fine-step reference on the same grid.

    Holding M fixed cancels the spatial error, so the distance to the
    reference isolates the first-order time stepping.  Every N must divide
    N_ref so slices align.  The ladder starts at N = 8: coarser steps sit
    outside the asymptotic range and pollute the fitted order.
    """
    for N in Ns:
        if N_ref % N != 0 or N >= N_ref:
            raise ValueError(f"each N must divide N_ref and be smaller, got {N}")

    def solve(N: int) -> np.ndarray:
        level = refit_problem(prob, M, N, np.zeros((N, M)))
        f = derived_forcing(mms, level, params.delta)
        level = replace(level, f=f)
        final, _, _ = solve_routed(level, params)
        return final.u

    u_ref = solve(N_ref)
    smesh = SpatialMesh(prob.smesh.length, M)
    table = Table(["N", "dt", "error"])
    for N in Ns:
        u = solve(N)
        stride = N_ref // N
        diff = u - u_ref[::stride]
        err = float(np.max(norm_V(diff, prob.p, smesh)))
        table.add(N, prob.tmesh.period / N, err)
    errs = table.column("error").astype(float)
    table.meta["orders"] = [float(o) for o in np.log2(errs[:-1] / errs[1:])]
    table.meta["slope"] = loglog_slope(table.column("dt"), errs)
    return table


def mms_spatial_order(
    mms: MmsSpec,
    prob: ProblemSpec,
    params: CascadeParams,
    Ms: tuple[int, ...] = (8, 16, 32),
    N: int = 4,
) -> Table:
    """Grid convergence on a steady manufactured solution.

    A time-independent exact solution makes the time stepping exact, so the
    nodal error isolates the second-order spatial operator.
    """
    table = Table(["M", "dx", "error"])
    for M in Ms:
        level = refit_problem(prob, M, N, np.zeros((N, M)))
        f = derived_forcing(mms, level, params.delta)
        level = replace(level, f=f)
        final, _, _ = solve_routed(level, params)
        smesh = SpatialMesh(prob.smesh.length, M)
        tmesh = TemporalMesh(prob.tmesh.period, N)
        U = sample_exact(mms, smesh, tmesh)
        err = float(np.max(norm_V(final.u - U, prob.p, smesh)))
        table.add(M, smesh.dx, err)
    errs = table.column("error").astype(float)
    table.meta["orders"] = [float(o) for o in np.log2(errs[:-1] / errs[1:])]
    table.meta["slope"] = loglog_slope(table.column("dx"), errs)
    return table


# ---------------------------------------------------------------------------
# invariant suite


def _check(name: str, margin: float, tol: float) -> dict:
    return {
        "name": name,
        "margin": float(margin),
        "tolerance": float(tol),
        "passed": bool(margin >= -tol),
    }


def invariant_suite(
    result: StageResult,
    prob: ProblemSpec,
    params: CascadeParams,
    rng: np.random.Generator | None = None,
) -> dict:
    """Evaluate the structural invariants on a converged stage.

    Each entry reports margin (how far inside the inequality the solution
    sits; negative means violated) and the tolerance used.  The report is
    data; nothing raises on failure.
    """
    rng = rng or np.random.default_rng(1234)
    u = result.u
    smesh, tmesh = prob.smesh, prob.tmesh
    scale = max(1.0, float(bochner_norm(
        prob.f, lambda s: norm_Vstar(s, prob.p_conj, smesh), prob.p_conj, tmesh
    )))
    checks: list[dict] = []

    # stationarity: the converged fixed point solves its stage equation
    if result.epsilon == 0.0 and result.mu == 0.0:
        res = residual_AP(u, prob, delta=params.delta)
        tol = 20.0 * params.fp_tol * scale
    else:
        res = float(result.diagnostics.get("fixed_point_residual", np.inf))
        tol = 2.0 * params.fp_tol * scale
    checks.append(_check("stationarity", tol - res, tol))

    # periodic energy inequality: rate pairing cannot exceed forcing pairing
    gap = -energy_margin(u, prob)
    checks.append(_check("energy_inequality", 1e-8 * scale - gap, 1e-8 * scale))

    # chain rule sum: nonnegative and O(dt)
    S = chain_rule_sum(u, prob, params.delta)
    du = time_derivative(u, tmesh)
    w = cc.phi_hessian_cell_weights(u, prob.a, prob.m, params.delta, smesh)
    ddu = cell_gradient(du, smesh)
    predicted = 0.5 * tmesh.dt * float(
        tmesh.dt * np.sum(smesh.dx * np.sum(w * ddu * ddu, axis=-1))
    )
    checks.append(_check("chain_rule_nonneg", S, 1e-10 * max(1.0, scale)))
    upper = max(4.0 * predicted, 1e-8 * scale)
    checks.append(_check("chain_rule_size", upper - S, upper))

    # dual flow inequality over every window: every window defect sum is
    # nonnegative (exact Fenchel-Young direction) and the full-period total
    # is O(dt), predicted by the Bregman gaps 0.5 <dxi, d du> (exact at p=2)
    psis = cc.fenchel_psi_star(result.xi, prob.nl, smesh)
    lf_scale = max(1.0, float(np.max(np.abs(psis))))
    checks.append(_check("dual_flow_windows", lf_margin(u, prob), 1e-8 * lf_scale))
    xi_loop = prob.nl.alpha_eval(du)
    dxi = xi_loop - np.roll(xi_loop, 1, axis=0)
    defect_total = float(np.sum(pairing(dxi, du, smesh)))
    bregman = 0.5 * float(
        np.sum(pairing(dxi, du - np.roll(du, 1, axis=0), smesh))
    )
    lf_upper = max(4.0 * abs(bregman), 1e-8 * lf_scale)
    checks.append(_check("dual_flow_size", lf_upper - defect_total, lf_upper))

    # proximal sandwich and parameter monotonicity on sample slices
    cfg = cc.PhiConfig(
        a=prob.a, m=prob.m, delta=params.delta, smesh=smesh, p=prob.p
    )
    lams = (1.0, 0.1, 0.01)
    sandwich_margin = np.inf
    picks = sorted({0, tmesh.step_count // 2, tmesh.step_count - 1})
    for n in picks:
        envs = []
        phu = float(cc.phi_value(u[n], cfg))
        for lam in lams:
            J, env, _ = cc.moreau_yosida(u[n], lam, cfg, tol=1e-11)
            phJ = float(cc.phi_value(J, cfg))
            sandwich_margin = min(sandwich_margin, env - phJ, phu - env)
            envs.append(env)
        for a_, b_ in zip(envs, envs[1:]):
            sandwich_margin = min(sandwich_margin, b_ - a_)  # env grows as lam drops
    env_tol = 1e-8 * max(1.0, abs(phu))
    checks.append(_check("proximal_sandwich", sandwich_margin, env_tol))

    # duality map identities on the solution slices
    dev = 0.0
    for n in picks:
        v = u[n]
        nv = float(norm_V(v, prob.p, smesh))
        F = cc.duality_map(v, prob.p, smesh)
        dev = max(dev, abs(float(pairing(F, v, smesh)) - nv**2))
        dev = max(dev, abs(float(norm_Vstar(F, prob.p_conj, smesh)) - nv))
    id_tol = 1e-10 * max(1.0, nv**2)
    checks.append(_check("duality_identities", id_tol - dev, id_tol))

    # Fenchel-Young equality on the rate pairs (du, xi)
    fy = np.abs(
        np.asarray(cc.eval_psi(du, prob.nl, smesh))
        + np.asarray(cc.fenchel_psi_star(result.xi, prob.nl, smesh))
        - np.asarray(pairing(result.xi, du, smesh))
    )
    fy_scale = max(1.0, float(np.max(np.abs(cc.eval_psi(du, prob.nl, smesh)))))
    fy_tol = 1e-8 * fy_scale
    checks.append(_check("fenchel_young_pairs", fy_tol - float(np.max(fy)), fy_tol))

    # monotonicity of the energy gradient on random pairs
    mono = np.inf
    for _ in range(5):
        v = rng.standard_normal(smesh.interior_count)
        w2 = rng.standard_normal(smesh.interior_count)
        gv = cc.phi_grad(v, cfg)
        gw = cc.phi_grad(w2, cfg)
        mono = min(mono, float(pairing(gv - gw, v - w2, smesh)))
    checks.append(_check("gradient_monotonicity", mono, 1e-12))

    return {"checks": checks, "all_passed": all(c["passed"] for c in checks)}


# ---------------------------------------------------------------------------
# structural stability (Mosco) experiments


@dataclass
class MoscoSequenceSpec:
    """A family of perturbed problems converging back to a base problem.

    Kinds: "diffusion_perturbation" scales the coefficient by
    1 + sin(n x)/n; "nonlinearity_perturbation" adds s/n to the rate map;
    "forcing_perturbation" adds g/n for a fixed shift g;
    "combined" applies all three; "identity" perturbs nothing (noise-floor
    control).  Every instance keeps the structural bounds with
    n-independent constants; violations are rejected at construction.
    """

    kind: str
    base: ProblemSpec
    index_set: tuple[int, ...] = tuple(range(1, 9))
    forcing_shift: np.ndarray | None = None
    tabulation_radius: float = 64.0
    tabulation_count: int = 4097

    _KINDS = (
        "diffusion_perturbation",
        "nonlinearity_perturbation",
        "forcing_perturbation",
        "combined",
        "identity",
    )

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown sequence kind {self.kind!r}")
        if any(n < 1 for n in self.index_set):
            raise ValueError("index set entries must be >= 1")

    def default_shift(self) -> np.ndarray:
        smesh, tmesh = self.base.smesh, self.base.tmesh
        xs = smesh.nodes
        ts = tmesh.times
        return np.sin(2 * np.pi * xs[None, :] / smesh.length) * np.cos(
            2 * np.pi * ts[:, None] / tmesh.period
        )

    def instance(self, n: int) -> ProblemSpec:
        base = self.base
        a, nl, f = base.a, base.nl, base.f
        if self.kind in ("diffusion_perturbation", "combined"):
            mids = base.smesh.cell_midpoints
            vals = a.midpoint_values * (1.0 + np.sin(n * mids) / n)
            a = cc.DiffusionField(
                vals, float(np.min(vals)), float(np.max(vals))
            )
        if self.kind in ("nonlinearity_perturbation", "combined"):
            nl = self._perturbed_nl(n)
        if self.kind in ("forcing_perturbation", "combined"):
            g = (
                self.forcing_shift
                if self.forcing_shift is not None
                else self.default_shift()
            )
            f = f + g / n
        return replace(base, a=a, nl=nl, f=f)

    def _perturbed_nl(self, n: int) -> cc.Nonlinearity:
        base = self.base.nl
        p = base.p_exponent
        if base.kind == "power" and p == 2.0:
            # alpha_n(s) = (1 + 1/n) s exactly, as a two-knot segment with
            # matching end-slope extension
            slope = 1.0 + 1.0 / n
            return cc.Nonlinearity.piecewise_linear(
                [(-1.0, -slope), (1.0, slope)], p_exponent=2.0
            )
        R, K = self.tabulation_radius, self.tabulation_count
        s = np.linspace(-R, R, K)
        return cc.Nonlinearity.custom_tabulated(
            s, base.alpha_eval(s) + s / n, p_exponent=p
        )


def mosco_experiment(
    seq: MoscoSequenceSpec,
    params: CascadeParams,
    jobs: int = 1,
) -> Table:
    """Solve each perturbed instance and measure drift from the base solution.

    Error is the sup-in-time nodal L^p distance, the discrete stand-in for
    uniform-in-time state-space convergence.  meta records the trailing to
    leading error ratio and whether errors decrease beyond the noise floor.
    """
    base_final, _, _ = solve_routed(seq.base, params)
    smesh, tmesh = seq.base.smesh, seq.base.tmesh
    p = seq.base.p

    def work(n: int):
        inst = seq.instance(n)
        final, _, _ = solve_routed(inst, params)
        err = float(
            bochner_norm(
                final.u - base_final.u,
                lambda s: norm_V(s, p, smesh),
                np.inf,
                tmesh,
            )
        )
        return n, err, final.converged, float(
            final.diagnostics.get("fixed_point_residual", np.nan)
        )

    ns = list(seq.index_set)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, ns))
    else:
        results = [work(n) for n in ns]
    table = Table(["n", "error", "converged", "residual"])
    for n, err, conv, res in sorted(results):
        table.add(n, err, conv, res)
    errs = table.column("error").astype(float)
    floor = 2.0 * params.resolved_stage_tol()
    above = errs > floor
    monotone = all(
        b < a for a, b, fa, fb in zip(errs, errs[1:], above, above[1:]) if fa and fb
    )
    table.meta["monotone_beyond_floor"] = bool(monotone)
    table.meta["noise_floor"] = floor
    if errs.size >= 2:
        table.meta["last_over_first"] = float(errs[-1] / max(errs[0], 1e-300))
    if np.all(above) and errs.size >= 3:
        table.meta["slope"] = loglog_slope(ns, errs)
    return table


# ---------------------------------------------------------------------------
# growth-envelope audit


_INEQUALITIES = (
    "state_by_rate_primitive",      # |u|_V^p <= C (psi(u) + 1)
    "rate_grad_by_state",           # |d psi(u)|^p' <= C (|u|_V^p + 1)
    "grad_norm_by_energy",          # |u|_X^m <= C (phi(u) + 1)
    "energy_grad_by_grad_norm",     # |eta|^m' <= C (|u|_X^m + 1)
    "rate_grad_by_primitive",       # |d psi(u)|^p' <= C (psi(u) + 1)
    "primitive_by_state",           # psi(u) <= C (|u|_V^p + 1)
    "state_by_rate_grad",           # |u|_V^p <= C (|d psi(u)|^p' + 1)
    "energy_grad_by_energy",        # |eta|^m' <= C (phi(u) + 1)
    "energy_by_grad_norm",          # phi(u) <= C (|u|_X^m + 1)
    "grad_norm_by_energy_grad",     # |u|_X^m <= C (|eta|^m' + 1)
)


def growth_audit(
    prob: ProblemSpec, sample_count: int = 40, seed: int = 0
) -> Table:
    """Empirically realized constants of the growth/coercivity envelope.

    Random fields are rescaled to nodal norms spanning five magnitude
    decades; per inequality and decade the audit reports the largest
    affine-form constant and, where the functional is exactly homogeneous,
    the homogeneous ratio (e.g. state-to-primitive realizes the exponent p
    itself for the power rate map).  Dual norms on the gradient-space side
    are measured in the nodal dual norm, a surrogate for the gradient-space
    dual.  All constants must be finite; there is no pass/fail here.
    """
    rng = np.random.default_rng(seed)
    smesh = prob.smesh
    p, pc, m = prob.p, prob.p_conj, prob.m
    mc = prob.m_conj
    decades = (-2, -1, 0, 1, 2)
    fields = rng.standard_normal((sample_count, smesh.interior_count))
    table = Table(["inequality", "decade", "affine_constant", "homogeneous_ratio"])
    power_kind = prob.nl.kind == "power"
    for dec in decades:
        target = 10.0**dec
        base_n = norm_V(fields, p, smesh)
        u = fields * (target / base_n)[:, None]
        psi = np.asarray(cc.eval_psi(u, prob.nl, smesh))
        dpsi = prob.nl.alpha_eval(u)
        dpsi_n = np.asarray(norm_Vstar(dpsi, pc, smesh)) ** pc
        up = np.asarray(norm_V(u, p, smesh)) ** p
        phi = np.asarray(cc.eval_phi(u, prob.a, prob.m, 0.0, smesh))
        eta = cc.grad_phi(u, prob.a, prob.m, 0.0, smesh)
        eta_n = np.asarray(norm_Vstar(eta, mc, smesh)) ** mc
        xm = np.asarray(norm_X(u, m, smesh)) ** m
        pairs = {
            "state_by_rate_primitive": (up, psi),
            "rate_grad_by_state": (dpsi_n, up),
            "grad_norm_by_energy": (xm, phi),
            "energy_grad_by_grad_norm": (eta_n, xm),
            "rate_grad_by_primitive": (dpsi_n, psi),
            "primitive_by_state": (psi, up),
            "state_by_rate_grad": (up, dpsi_n),
            "energy_grad_by_energy": (eta_n, phi),
            "energy_by_grad_norm": (phi, xm),
            "grad_norm_by_energy_grad": (xm, eta_n),
        }
        for name in _INEQUALITIES:
            lhs, rhs = pairs[name]
            affine = float(np.max(lhs / (rhs + 1.0)))
            homog = float(np.max(lhs / np.maximum(rhs, 1e-300)))
            if not power_kind and name in (
                "state_by_rate_primitive",
                "rate_grad_by_state",
                "rate_grad_by_primitive",
                "primitive_by_state",
                "state_by_rate_grad",
            ):
                homog = float("nan")  # only power maps are exactly homogeneous
            table.add(name, dec, affine, homog)
    finite = np.isfinite(table.column("affine_constant").astype(float))
    table.meta["all_finite"] = bool(np.all(finite))
    return table
