"""Batch front door: JSON configs in, tables and reports out.

Subcommands: solve, verify, mms, mosco, sweep.  Every run is driven by a
versioned JSON config; validation failures name the offending key and exit
with code 1, solver non-convergence exits with code 2 (the report is still
written), success exits 0.  All randomness flows from the single seed, and
identical configs produce byte-identical CSV outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import convexcore as cc
from .cascade import CascadeParams, StageResult, solve_routed
from .discretize import (
    ProblemSpec,
    SpatialMesh,
    TemporalMesh,
    sample_forcing,
    write_field_csv,
    write_field_dat,
)
from .verify import (
    MoscoSequenceSpec,
    Table,
    growth_audit,
    invariant_suite,
    mms_run,
    named_exact_solution,
    mms_discrete,
    mms_continuum,
    mosco_experiment,
)
from .variational import residual_AP

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "cmd_solve",
    "cmd_verify",
    "cmd_mms",
    "cmd_mosco",
    "cmd_sweep",
    "main",
]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOCONV = 2


class ConfigError(ValueError):
    """Invalid configuration; carries the dotted key path."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


_SENTINEL = object()


def _get(d: dict, key: str, path: str, typ=None, default=_SENTINEL):
    if key not in d:
        if default is not _SENTINEL:
            return default
        raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    val = d[key]
    if typ is not None and not isinstance(val, typ):
        names = typ if isinstance(typ, tuple) else (typ,)
        raise ConfigError(
            f"{path}.{key}" if path else key,
            f"expected {'/'.join(t.__name__ for t in names)}, got {type(val).__name__}",
        )
    return val


def _number(d: dict, key: str, path: str, default=_SENTINEL):
    val = _get(d, key, path, (int, float), default)
    if isinstance(val, bool):
        raise ConfigError(f"{path}.{key}", "expected a number, got a boolean")
    return float(val)


@dataclass
class RunConfig:
    """Validated run configuration plus the raw document for echoing."""

    problem: ProblemSpec
    cascade: CascadeParams
    seed: int
    output_dir: str
    raw: dict
    route: str = "auto"

    def block(self, name: str) -> dict:
        return self.raw.get(name, {})


def _build_nonlinearity(spec: dict, p: float, path: str) -> cc.Nonlinearity:
    kind = _get(spec, "kind", path, str, "power")
    try:
        if kind == "power":
            return cc.Nonlinearity.power(p)
        if kind == "piecewise_linear":
            pts = _get(spec, "breakpoints", path, list)
            return cc.Nonlinearity.piecewise_linear(pts, p_exponent=p)
        if kind == "custom_tabulated":
            if "path" in spec:
                return cc.Nonlinearity.from_csv(spec["path"], p_exponent=p)
            s = _get(spec, "s_values", path, list)
            al = _get(spec, "alpha_values", path, list)
            return cc.Nonlinearity.custom_tabulated(s, al, p_exponent=p)
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(path, str(exc)) from exc
    raise ConfigError(f"{path}.kind", f"unknown nonlinearity kind {kind!r}")


def _build_diffusion(spec: dict, smesh: SpatialMesh, path: str) -> cc.DiffusionField:
    kind = _get(spec, "kind", path, str, "constant")
    try:
        if kind == "constant":
            return cc.DiffusionField.constant(_number(spec, "value", path, 1.0), smesh)
        if kind == "values":
            vals = np.asarray(_get(spec, "values", path, list), dtype=float)
            if vals.size != smesh.interior_count + 1:
                raise ConfigError(
                    f"{path}.values",
                    f"need {smesh.interior_count + 1} midpoint values, got {vals.size}",
                )
            return cc.DiffusionField(vals, float(vals.min()), float(vals.max()))
        if kind == "sin_modulated":
            base = _number(spec, "base", path, 1.0)
            amp = _number(spec, "amplitude", path, 0.5)
            mode = _number(spec, "mode", path, 1.0)
            vals = base * (
                1.0 + amp * np.sin(np.pi * mode * smesh.cell_midpoints / smesh.length)
            )
            return cc.DiffusionField(vals, float(vals.min()), float(vals.max()))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc
    raise ConfigError(f"{path}.kind", f"unknown diffusion kind {kind!r}")


def _build_problem(doc: dict) -> ProblemSpec:
    pb = _get(doc, "problem", "", dict)
    path = "problem"
    p = _number(pb, "p", path, 2.0)
    m = _number(pb, "m", path, 2.0)
    if p <= 1.0:
        raise ConfigError("problem.p", f"must exceed 1, got {p}")
    if m <= 1.0:
        raise ConfigError("problem.m", f"must exceed 1, got {m}")
    L = _number(pb, "L", path, 1.0)
    T = _number(pb, "T", path, 1.0)
    M = _get(pb, "M", path, int, 32)
    N = _get(pb, "N", path, int, 32)
    try:
        smesh = SpatialMesh(L, M)
        tmesh = TemporalMesh(T, N)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc
    nl = _build_nonlinearity(
        _get(pb, "nonlinearity", path, dict, {}), p, f"{path}.nonlinearity"
    )
    a = _build_diffusion(_get(pb, "diffusion", path, dict, {}), smesh, f"{path}.diffusion")
    fspec = _get(pb, "forcing", path, dict, {"kind": "zero"})
    try:
        f = sample_forcing(fspec, smesh, tmesh)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"{path}.forcing", str(exc)) from exc
    try:
        return ProblemSpec(p=p, m=m, nl=nl, a=a, f=f, smesh=smesh, tmesh=tmesh)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def _build_cascade(doc: dict) -> CascadeParams:
    cb = _get(doc, "cascade", "", dict, {})
    path = "cascade"
    kwargs = {}
    for key in (
        "epsilon_schedule",
        "lambda_schedule",
        "mu_schedule",
    ):
        if key in cb:
            kwargs[key] = tuple(_get(cb, key, path, list))
    for key in ("alpha_exp", "delta", "fp_tol", "stage_tol", "omega"):
        if key in cb and cb[key] is not None:
            kwargs[key] = _number(cb, key, path)
    for key in ("max_fp_iter", "anderson_depth", "max_newton", "mu_eps_truncate"):
        if key in cb:
            kwargs[key] = _get(cb, key, path, int)
    if "exact_limit_stage" in cb:
        kwargs["exact_limit_stage"] = _get(cb, "exact_limit_stage", path, bool)
    try:
        return CascadeParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def load_config(path: str, output_override: str | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be an object")
    schema = _get(doc, "schema", "", int, 1)
    if schema != 1:
        raise ConfigError("schema", f"unsupported schema version {schema}")
    seed = _get(doc, "seed", "", int, 0)
    out = output_override or _get(doc, "output_dir", "", str, "out")
    route = _get(doc, "route", "", str, "auto")
    if route not in ("auto", "mu"):
        raise ConfigError("route", f"must be 'auto' or 'mu', got {route!r}")
    problem = _build_problem(doc)
    cascade = _build_cascade(doc)
    return RunConfig(
        problem=problem, cascade=cascade, seed=seed, output_dir=out, raw=doc,
        route=route,
    )


# ---------------------------------------------------------------------------
# output helpers


def _ensure_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _stage_summary(stage: StageResult) -> dict:
    d = dict(stage.diagnostics)
    d.pop("residual_history", None)
    return {"epsilon": stage.epsilon, "mu": stage.mu, **d}


def _write_report(outdir: Path, payload: dict) -> None:
    with open(outdir / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _solve_and_dump(cfg: RunConfig, outdir: Path) -> tuple[StageResult, dict]:
    final, stages, route = solve_routed(cfg.problem, cfg.cascade, route=cfg.route)
    write_field_csv(
        str(outdir / "trajectory.csv"), final.u, cfg.problem.smesh, cfg.problem.tmesh
    )
    write_field_dat(
        str(outdir / "trajectory.dat"), final.u, cfg.problem.smesh, cfg.problem.tmesh
    )
    payload = {
        "command": "solve",
        "route": route,
        "converged": final.converged,
        "final_residual_AP": residual_AP(
            final.u, cfg.problem, delta=cfg.cascade.delta
        ),
        "stages": [_stage_summary(s) for s in stages],
        "config": cfg.raw,
    }
    return final, payload


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg: RunConfig) -> int:
    outdir = _ensure_dir(cfg.output_dir)
    final, payload = _solve_and_dump(cfg, outdir)
    code = EXIT_OK if final.converged else EXIT_NOCONV
    payload["exit_code"] = code
    _write_report(outdir, payload)
    log.info("solve: converged=%s residual=%.3e", final.converged,
             payload["final_residual_AP"])
    return code


def cmd_verify(cfg: RunConfig) -> int:
    outdir = _ensure_dir(cfg.output_dir)
    final, payload = _solve_and_dump(cfg, outdir)
    suite = invariant_suite(
        final, cfg.problem, cfg.cascade, rng=np.random.default_rng(cfg.seed + 1)
    )
    audit = growth_audit(
        cfg.problem,
        sample_count=int(cfg.block("verify").get("sample_count", 40)),
        seed=cfg.seed,
    )
    audit.to_csv(str(outdir / "growth_audit.csv"))
    audit.to_dat(str(outdir / "growth_audit.dat"))
    payload["command"] = "verify"
    payload["invariants"] = suite
    payload["growth_audit"] = audit.meta
    ok = final.converged and suite["all_passed"] and audit.meta.get("all_finite", False)
    code = EXIT_OK if ok else EXIT_NOCONV
    payload["exit_code"] = code
    _write_report(outdir, payload)
    return code


def _build_mms_spec(cfg: RunConfig):
    blk = cfg.block("mms")
    name = blk.get("exact", "separable_bump")
    mode = blk.get("mode", "discrete_exact")
    L, T = cfg.problem.smesh.length, cfg.problem.tmesh.period
    try:
        base = named_exact_solution(name, L, T)
    except ValueError as exc:
        raise ConfigError("mms.exact", str(exc)) from exc
    if mode == "discrete_exact":
        spec = mms_discrete(base.exact_u, name=name)
    elif mode == "continuum":
        spec = mms_continuum(base.u_expr, name=name)
    else:
        raise ConfigError("mms.mode", f"unknown mode {mode!r}")
    levels = blk.get("levels", [[8, 8], [16, 16], [32, 32]])
    try:
        levels = tuple((int(M), int(N)) for M, N in levels)
    except (TypeError, ValueError) as exc:
        raise ConfigError("mms.levels", "expected a list of [M, N] pairs") from exc
    return spec, levels


def cmd_mms(cfg: RunConfig, jobs: int = 1) -> int:
    outdir = _ensure_dir(cfg.output_dir)
    spec, levels = _build_mms_spec(cfg)
    table = mms_run(spec, cfg.problem, cfg.cascade, levels=levels, jobs=jobs)
    table.to_csv(str(outdir / "mms.csv"))
    table.to_dat(str(outdir / "mms.dat"))
    ok = bool(np.all(table.column("converged")))
    payload = {
        "command": "mms",
        "table": table.as_dict(),
        "config": cfg.raw,
        "exit_code": EXIT_OK if ok else EXIT_NOCONV,
    }
    _write_report(outdir, payload)
    return payload["exit_code"]


def cmd_mosco(cfg: RunConfig, jobs: int = 1) -> int:
    outdir = _ensure_dir(cfg.output_dir)
    blk = cfg.block("mosco")
    kind = blk.get("kind", "diffusion_perturbation")
    n_max = int(blk.get("n_max", 8))
    try:
        seq = MoscoSequenceSpec(
            kind=kind, base=cfg.problem, index_set=tuple(range(1, n_max + 1))
        )
    except ValueError as exc:
        raise ConfigError("mosco.kind", str(exc)) from exc
    table = mosco_experiment(seq, cfg.cascade, jobs=jobs)
    table.to_csv(str(outdir / "mosco.csv"))
    table.to_dat(str(outdir / "mosco.dat"))
    ok = bool(np.all(table.column("converged")))
    payload = {
        "command": "mosco",
        "table": table.as_dict(),
        "config": cfg.raw,
        "exit_code": EXIT_OK if ok else EXIT_NOCONV,
    }
    _write_report(outdir, payload)
    return payload["exit_code"]


def cmd_sweep(cfg: RunConfig, jobs: int = 1) -> int:
    outdir = _ensure_dir(cfg.output_dir)
    blk = cfg.block("sweep")
    pairs = blk.get("pairs", [[2, 2], [2, 3], [2.5, 3], [3, 2], [2, 1.5]])
    eps_finals = blk.get("epsilon_final", [cfg.cascade.epsilon_schedule[-1]])
    if cfg.problem.nl.kind != "power":
        raise ConfigError("sweep", "sweep varies p and requires the power rate map")
    combos = []
    for pm in pairs:
        try:
            p, m = float(pm[0]), float(pm[1])
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError("sweep.pairs", "expected [p, m] pairs") from exc
        for ef in eps_finals:
            combos.append((p, m, float(ef)))

    def run(combo):
        p, m, ef = combo
        sub = outdir / f"p{p:g}_m{m:g}_eps{ef:g}"
        _ensure_dir(str(sub))
        sched = tuple(e for e in cfg.cascade.epsilon_schedule if e >= ef)
        if not sched or sched[-1] != ef:
            sched = sched + (ef,)
        params = replace(cfg.cascade, epsilon_schedule=sched)
        prob = replace(
            cfg.problem, p=p, m=m, nl=cc.Nonlinearity.power(p)
        )
        final, stages, route = solve_routed(prob, params)
        write_field_csv(str(sub / "trajectory.csv"), final.u, prob.smesh, prob.tmesh)
        res = residual_AP(final.u, prob, delta=params.delta)
        _write_report(
            sub,
            {
                "command": "solve",
                "route": route,
                "converged": final.converged,
                "final_residual_AP": res,
                "stages": [_stage_summary(s) for s in stages],
                "exit_code": EXIT_OK if final.converged else EXIT_NOCONV,
            },
        )
        return p, m, ef, route, final.converged, res

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, combos))
    else:
        results = [run(c) for c in combos]
    summary = Table(["p", "m", "epsilon_final", "route", "converged", "residual"])
    for row in results:
        summary.add(*row)
    summary.to_csv(str(outdir / "summary.csv"))
    summary.to_dat(str(outdir / "summary.dat"))
    ok = all(r[4] for r in results)
    _write_report(
        outdir,
        {
            "command": "sweep",
            "runs": len(results),
            "all_converged": ok,
            "config": cfg.raw,
            "exit_code": EXIT_OK if ok else EXIT_NOCONV,
        },
    )
    return EXIT_OK if ok else EXIT_NOCONV


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="perisolve",
        description="Time-periodic doubly nonlinear diffusion solver and "
        "verification harness",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("solve", "run the regularization cascade and write the trajectory"),
        ("verify", "solve, then run the invariant suite and growth audit"),
        ("mms", "manufactured-solution convergence study"),
        ("mosco", "structural-stability experiment"),
        ("sweep", "solve over a grid of (p, m, final epsilon) values"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--output", default=None, help="output directory override")
        sp.add_argument("--jobs", type=int, default=1, help="worker pool size")
        sp.add_argument("--quiet", action="store_true", help="warnings only")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, output_override=args.output)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "mms":
            return cmd_mms(cfg, jobs=args.jobs)
        if args.command == "mosco":
            return cmd_mosco(cfg, jobs=args.jobs)
        if args.command == "sweep":
            return cmd_sweep(cfg, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
