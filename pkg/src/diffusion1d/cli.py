"""Command-line entry point.

Problem files are strict JSON: a ``diffusion`` block (D, drift preset or
expression, domain), a ``grid`` block, and one parameter block per
subcommand.  Unknown keys anywhere are rejected.  Every run emits a JSON
result document (inputs echoed, seeds, values, residuals) and, with --csv,
two-column x,value dumps of grid fields.

Exit codes: 0 success, 2 problem-file or expression parse error,
3 numerical failure, 4 inconclusive boundary classification.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import bridge as bridge_mod
from . import hydro as hydro_mod
from .core import DiffusionSpec, DomainError, GridField, Interval, UniformGrid, integrate
from .expr import ExprEvalError, ExprSyntaxError, parse_expression
from .feller import InconclusiveError, classify_boundary
from .kernels import bessel_density, heat_kernel, mehler_kernel
from .pathint import absorbing_limit_study, fk_kernel_mc
from .sde import SimConfig, empirical_density, first_passage_fraction, simulate
from .spectral import (
    D_CONVENTION,
    drift_from_state,
    hermite_state,
    nodal_decomposition,
    omega_from_drift,
    sturm_liouville_solve,
)

__all__ = ["main"]


class ProblemError(ValueError):
    """Problem-file validation failure."""


_PRESET = re.compile(r"^(ou|bessel|hermite)\(\s*([-+0-9.eE]+)\s*\)$")


def _take(block: dict, allowed: set[str], required: set[str], context: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ProblemError(f"unknown key {sorted(unknown)[0]!r} in {context}")
    missing = required - set(block)
    if missing:
        raise ProblemError(f"missing key {sorted(missing)[0]!r} in {context}")


def _endpoint(v, context: str) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf"):
            return math.inf
        if s == "-inf":
            return -math.inf
        raise ProblemError(f"bad endpoint {v!r} in {context}")
    if isinstance(v, (int, float)):
        return float(v)
    raise ProblemError(f"bad endpoint {v!r} in {context}")


def _fmt_endpoint(v: float) -> str:
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    return repr(v)


def _build_spec(block: dict) -> tuple[DiffusionSpec, dict]:
    _take(block, {"D", "drift", "domain"}, {"D", "drift"}, "diffusion")
    D = float(block["D"])
    drift_text = block["drift"]
    if not isinstance(drift_text, str):
        raise ProblemError("diffusion.drift must be a string (preset or expression)")
    domain = Interval(-math.inf, math.inf)
    if "domain" in block:
        dom = block["domain"]
        if not (isinstance(dom, list) and len(dom) == 2):
            raise ProblemError("diffusion.domain must be [r1, r2]")
        domain = Interval(_endpoint(dom[0], "domain"), _endpoint(dom[1], "domain"))

    meta = {"drift": drift_text}
    m = _PRESET.match(drift_text.strip())
    if m:
        name, arg = m.group(1), float(m.group(2))
        if name == "ou":
            w = arg

            def drift(x):
                return -w * np.asarray(x, dtype=float)

            spec = DiffusionSpec(
                D=D,
                drift=drift,
                domain=domain,
                drift_potential=lambda x: -w * np.asarray(x, dtype=float) ** 2 / (4.0 * D),
                drift_d1=lambda x: np.full_like(np.asarray(x, dtype=float), -w),
                drift_d2=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            )
        elif name == "bessel":
            a = arg
            if a < 0:
                raise ProblemError("bessel(a) needs a >= 0")
            if "domain" not in block:
                domain = Interval(0.0, math.inf)
            c = D * (1.0 + 2.0 * a)
            spec = DiffusionSpec(
                D=D,
                drift=lambda x: c / np.asarray(x, dtype=float),
                domain=domain,
                drift_potential=lambda x: (1.0 + 2.0 * a) / 2.0 * np.log(np.asarray(x, dtype=float)),
                drift_d1=lambda x: -c / np.asarray(x, dtype=float) ** 2,
                drift_d2=lambda x: 2.0 * c / np.asarray(x, dtype=float) ** 3,
            )
        else:  # hermite(n)
            n = int(arg)
            if abs(D - D_CONVENTION) > 1e-15:
                raise ProblemError("hermite(n) drifts use the rescaled convention D = 1/2")
            st = hermite_state(n)
            b = drift_from_state(st)
            spec = DiffusionSpec(
                D=D,
                drift=b,
                domain=domain,
                drift_potential=b.potential,
                drift_d1=b.d1,
                drift_d2=b.d2,
            )
            meta["nodes"] = [float(z) for z in st.nodes]
    else:
        expr = parse_expression(drift_text)
        spec = DiffusionSpec(D=D, drift=expr, domain=domain)
    return spec, meta


def _build_grid(block: dict) -> UniformGrid:
    _take(block, {"lo", "hi", "n"}, {"lo", "hi", "n"}, "grid")
    return UniformGrid(float(block["lo"]), float(block["hi"]), int(block["n"]))


def _density_field(text: str, grid: UniformGrid) -> GridField:
    expr = parse_expression(text)
    return GridField.sample(grid, expr).normalized()


def _pyify(obj):
    if isinstance(obj, dict):
        return {k: _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_pyify(v) for v in obj.tolist()]
    if isinstance(obj, float) and not math.isfinite(obj):
        return _fmt_endpoint(obj) if obj in (math.inf, -math.inf) else "nan"
    return obj


# ---------------------------------------------------------------- subcommands


def _run_classify(problem: dict, args) -> tuple[dict, list]:
    spec, meta = _build_spec(problem["diffusion"])
    block = problem.get("classify", {})
    _take(block, {"x0", "endpoints"}, {"x0"}, "classify")
    x0 = float(block["x0"])
    which = block.get("endpoints", ["r1", "r2"])
    out = []
    for name in which:
        if name not in ("r1", "r2"):
            raise ProblemError(f"classify.endpoints entries must be 'r1' or 'r2', got {name!r}")
        endpoint = spec.domain.r1 if name == "r1" else spec.domain.r2
        c = classify_boundary(spec, endpoint, x0)
        out.append(
            {
                "endpoint": _fmt_endpoint(endpoint),
                "class": c.kind.value,
                "l1_verdict": c.diagnostics.l1_verdict,
                "l2_verdict": c.diagnostics.l2_verdict,
                "l1_total": c.diagnostics.l1_total,
                "l2_total": c.diagnostics.l2_total,
                "steps": len(c.diagnostics.l1_increments),
            }
        )
    return {"drift": meta, "x0": x0, "boundaries": out}, []


def _kernel_oracle(block: dict, D: float):
    kind = block.get("kind", "heat")
    if kind == "heat":
        return heat_kernel(D), "heat"
    if kind == "mehler":
        return mehler_kernel(), "mehler"
    if kind == "bessel":
        return bessel_density(float(block.get("a", 0.5))), "bessel"
    raise ProblemError(f"unknown kernel kind {kind!r}")


def _run_kernel(problem: dict, args) -> tuple[dict, list]:
    spec, _ = _build_spec(problem["diffusion"])
    grid = _build_grid(problem["grid"])
    block = problem.get("kernel", {})
    _take(block, {"kind", "a", "y", "s", "ts"}, {"y", "ts"}, "kernel")
    oracle, kind = _kernel_oracle(block, spec.D)
    y = float(block["y"])
    s = float(block.get("s", 0.0))
    xs = grid.points
    tables = []
    csvs = []
    for t in block["ts"]:
        t = float(t)
        vals = np.asarray(oracle(y, s, xs, t), dtype=float)
        mass = integrate(GridField(grid, vals))
        tables.append({"t": t, "mass": mass, "values": vals})
        csvs.append((f"kernel_t{t:g}", xs, vals))
    return {"kind": kind, "y": y, "s": s, "table": tables}, csvs


def _run_bridge(problem: dict, args) -> tuple[dict, list]:
    spec, _ = _build_spec(problem["diffusion"])
    grid = _build_grid(problem["grid"])
    block = problem.get("bridge", {})
    _take(
        block,
        {"rho0", "rhoT", "T", "kernel", "times", "tol", "max_iter"},
        {"rho0", "rhoT", "T"},
        "bridge",
    )
    rho0 = _density_field(block["rho0"], grid)
    rhoT = _density_field(block["rhoT"], grid)
    kernel_name = block.get("kernel", "mehler")
    kernel = mehler_kernel() if kernel_name == "mehler" else heat_kernel(spec.D)
    if kernel_name not in ("mehler", "heat"):
        raise ProblemError(f"bridge.kernel must be 'mehler' or 'heat', got {kernel_name!r}")
    prob = bridge_mod.BridgeProblem(rho0=rho0, rhoT=rhoT, T=float(block["T"]), kernel=kernel, D=spec.D)
    sol = bridge_mod.solve_bridge(
        prob, tol=float(block.get("tol", 1e-10)), max_iter=int(block.get("max_iter", 20000))
    )
    results = {
        "converged": sol.converged,
        "iterations": sol.iterations,
        "marginal_residual": sol.marginal_residual,
        "gauge": sol.gauge,
        "slices": [],
    }
    csvs = []
    for t in block.get("times", [0.0, float(block["T"]) / 2.0, float(block["T"])]):
        t = float(t)
        rho_t = bridge_mod.interpolate_density(sol, t)
        drift_t = bridge_mod.bridge_drift(sol, t)
        results["slices"].append({"t": t, "mass": integrate(rho_t)})
        csvs.append((f"bridge_rho_t{t:g}", grid.points, rho_t.values))
        csvs.append((f"bridge_drift_t{t:g}", grid.points, drift_t.values))
    return results, csvs


def _require_seed(args) -> int:
    if args.seed is None:
        raise ProblemError("stochastic subcommands require --seed")
    return args.seed


def _run_pathint(problem: dict, args) -> tuple[dict, list]:
    spec, _ = _build_spec(problem["diffusion"])
    block = problem.get("pathint", {})
    _take(block, {"omega", "y", "s", "x", "t", "cutoffs"}, {"omega", "y", "x", "t"}, "pathint")
    seed = _require_seed(args)
    omega = parse_expression(block["omega"])
    y, s, x, t = float(block["y"]), float(block.get("s", 0.0)), float(block["x"]), float(block["t"])
    n_paths = args.paths or 100_000
    n_steps = args.steps or 200

    def pack(est):
        return {
            "value": est.value,
            "std_error": est.std_error,
            "n_effective": est.n_effective,
            "n_paths": est.n_paths,
            "n_discarded": est.n_discarded,
            "unreliable": est.unreliable,
            "seed": est.seed,
        }

    if "cutoffs" in block:
        cutoffs = [float(r) for r in block["cutoffs"]]
        ests = absorbing_limit_study(
            omega, spec.D, y, x, t, cutoffs, n_paths, seed, n_steps=n_steps
        )
        return {
            "mode": "absorbing_limit",
            "cutoffs": cutoffs,
            "estimates": [pack(e) for e in ests],
        }, []
    est = fk_kernel_mc(omega, spec.domain, spec.D, y, s, x, t, n_paths, n_steps, seed)
    return {"mode": "kernel", "estimate": pack(est)}, []


def _run_simulate(problem: dict, args) -> tuple[dict, list]:
    spec, _ = _build_spec(problem["diffusion"])
    grid = _build_grid(problem["grid"])
    block = problem.get("simulate", {})
    _take(block, {"x0", "T", "dt", "nodes", "passage_level"}, {"x0", "T", "dt"}, "simulate")
    seed = _require_seed(args)
    cfg = SimConfig(
        dt=float(block["dt"]), T=float(block["T"]), n_paths=args.paths or 10_000, seed=seed
    )
    nodes = tuple(float(z) for z in block.get("nodes", []))
    res = simulate(spec, float(block["x0"]), cfg, nodes=nodes)
    field, outside = empirical_density(res.terminals, grid)
    results = {
        "n_paths": cfg.n_paths,
        "terminal_mean": float(res.terminals.mean()),
        "terminal_var": float(res.terminals.var()),
        "n_flagged": res.n_flagged,
        "flagged_fraction": res.flagged_fraction,
        "unreliable": res.unreliable,
        "outside_mass": outside,
        "seed": seed,
    }
    if "passage_level" in block:
        rep = first_passage_fraction(spec, float(block["x0"]), float(block["passage_level"]), cfg, nodes=nodes)
        results["passage"] = {
            "target": rep.target,
            "fraction_hit": rep.fraction_hit,
            "mean_hit_time": rep.mean_hit_time,
            "n_hits": rep.n_hits,
        }
    return results, [("empirical_density", grid.points, field.values)]


def _run_hydro(problem: dict, args) -> tuple[dict, list]:
    spec, _ = _build_spec(problem["diffusion"])
    grid = _build_grid(problem["grid"])
    block = problem.get("hydro", {})
    _take(block, {"rho", "nodes", "window", "ehrenfest_window"}, {"rho"}, "hydro")
    rho = _density_field(block["rho"], grid)
    nodes = tuple(float(z) for z in block.get("nodes", []))
    hf = hydro_mod.build_hydro(spec, rho, nodes=nodes)

    inner = hydro_mod.interior_mask(hf.valid, 5)
    gq, _ = hydro_mod.masked_derivative(hf.Q.values, hf.valid, grid.h, 1)
    gp, _ = hydro_mod.masked_derivative(hf.P.values, hf.valid, grid.h, 1)
    mm = inner & (rho.values > 1e-8)
    pressure_identity = float(np.max(np.abs(gq[mm] - gp[mm] / rho.values[mm]))) if mm.any() else None
    omq = hf.Omega.values[inner] - hf.Q.values[inner]
    ew = block.get("ehrenfest_window", [None, None])
    lhs, rhs = hydro_mod.ehrenfest_check(
        hf, lo=None if ew[0] is None else float(ew[0]), hi=None if ew[1] is None else float(ew[1])
    )
    results = {
        "valid_points": int(hf.valid.sum()),
        "omega_minus_q_spread": float(np.ptp(omq)) if inner.any() else None,
        "grad_pressure_identity_max_err": pressure_identity,
        "ehrenfest_lhs": lhs,
        "ehrenfest_rhs": rhs,
        "max_abs_v": float(np.max(np.abs(hf.v.values[inner]))) if inner.any() else None,
    }
    if "window" in block:
        a, b = float(block["window"][0]), float(block["window"][1])
        mb = hydro_mod.momentum_balance(hf, a, b)
        results["momentum_balance"] = {
            "window": [a, b],
            "volume_force": mb.volume_force,
            "pressure_term": mb.pressure_term,
            "total": mb.total,
            "cross_check": mb.cross_check,
            "residual": mb.residual,
        }
    csvs = [
        (name, grid.points, getattr(hf, name).values)
        for name in ("rho", "b", "b_star", "v", "u", "Q", "P", "Omega")
    ]
    return results, csvs


def _run_spectral(problem: dict, args) -> tuple[dict, list]:
    block = problem.get("spectral", {})
    _take(block, {"n_max", "omega", "classify_components"}, set(), "spectral")
    n_max = args.n_max if args.n_max is not None else int(block.get("n_max", 3))
    classify = bool(block.get("classify_components", True))
    probe = 0.31  # off every low-order node
    states_out = []
    csvs = []
    if "omega" in block:
        grid = _build_grid(problem["grid"])
        om = GridField.sample(grid, parse_expression(block["omega"]))
        states = sturm_liouville_solve(om, D_CONVENTION, n_max)
    else:
        states = [hermite_state(n) for n in range(n_max + 1)]
    for st in states:
        b = drift_from_state(st)
        om_fn = omega_from_drift(b, st.D)
        entry = {
            "n": st.n,
            "epsilon": st.epsilon,
            "nodes": [float(z) for z in st.nodes],
            "omega_constant": float(om_fn(probe) - probe**2 / 2.0),
        }
        if classify:
            comps = nodal_decomposition(st, classify=True)
            entry["components"] = [
                {
                    "interval": [_fmt_endpoint(m.interval.r1), _fmt_endpoint(m.interval.r2)],
                    "weight": m.weight,
                    "classes": [m.boundaries[0].kind.value, m.boundaries[1].kind.value],
                }
                for m in comps
            ]
        states_out.append(entry)
    return {"n_max": n_max, "states": states_out}, csvs


_HANDLERS = {
    "classify": _run_classify,
    "kernel": _run_kernel,
    "bridge": _run_bridge,
    "pathint": _run_pathint,
    "simulate": _run_simulate,
    "hydro": _run_hydro,
    "spectral": _run_spectral,
}

_TOP_KEYS = {"diffusion", "grid"} | set(_HANDLERS)


def _load_problem(path: str, need_grid: bool) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ProblemError(f"cannot read problem file: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"problem file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProblemError("problem file must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ProblemError(f"unknown key {sorted(unknown)[0]!r} at the top level")
    if "diffusion" not in doc:
        raise ProblemError("missing key 'diffusion'")
    if need_grid and "grid" not in doc:
        raise ProblemError("missing key 'grid'")
    return doc


def _write_csv(out_dir: Path, name: str, xs: np.ndarray, vals: np.ndarray) -> str:
    path = out_dir / f"{name}.csv"
    lines = ["x,value"]
    lines.extend(f"{float(a)!r},{float(v)!r}" for a, v in zip(xs, vals))
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="diffusion1d",
        description="Analyze one-dimensional diffusions with inaccessible boundaries.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _HANDLERS:
        p = sub.add_parser(name)
        p.add_argument("--problem", required=True, help="path to the JSON problem file")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (required for stochastic runs)")
        p.add_argument("--paths", type=int, default=None, help="Monte Carlo path count")
        p.add_argument("--steps", type=int, default=None, help="time slices per path")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--json", action="store_true", help="print the result document to stdout")
        p.add_argument("--csv", action="store_true", help="emit CSV grid dumps")
        if name == "spectral":
            p.add_argument("--n-max", dest="n_max", type=int, default=None)
    args = parser.parse_args(argv)
    if not hasattr(args, "n_max"):
        args.n_max = None

    try:
        need_grid = args.subcommand in ("kernel", "bridge", "simulate", "hydro")
        problem = _load_problem(args.problem, need_grid)
        results, csvs = _HANDLERS[args.subcommand](problem, args)
    except (ProblemError, ExprSyntaxError) as exc:
        _emit_error(args, "parse", exc)
        return 2
    except InconclusiveError as exc:
        _emit_error(args, "inconclusive", exc)
        return 4
    except (DomainError, ExprEvalError, OverflowError, ValueError, RuntimeError) as exc:
        _emit_error(args, "numerical", exc)
        return 3

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    document = {
        "subcommand": args.subcommand,
        "problem": problem,
        "flags": {"seed": args.seed, "paths": args.paths, "steps": args.steps},
        "results": _pyify(results),
    }
    if args.csv:
        document["csv_files"] = [_write_csv(out_dir, name, xs, vals) for name, xs, vals in csvs]
    payload = json.dumps(document, sort_keys=True, indent=2)
    (out_dir / f"{args.subcommand}_result.json").write_text(payload + "\n")
    if args.json:
        print(payload)
    return 0


def _emit_error(args, kind: str, exc: Exception) -> None:
    doc = {"error": {"kind": kind, "type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
