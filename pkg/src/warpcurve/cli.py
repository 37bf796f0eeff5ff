"""Command line front end: configuration ingestion, run orchestration,
result archives, and plot-data export.

Exit codes: 0 success, 1 I/O or validation error, 2 continuation failure,
3 hypothesis rejection, 4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from math import acosh
from pathlib import Path

import numpy as np

from . import __version__, geometry, oracle, problem, solver, symfunc
from .errors import ContinuationError, WarpcurveError
from .geometry import FlatTorus, GridFunction, Sphere2, WarpingFunction
from .problem import (CoefficientFamily, CoefficientTerm, PhiFunction,
                      ProblemSpec, TabulatedCoefficients,
                      load_coefficient_table)

FLOAT_FMT = "%.17g"  # bit-stable decimal round trip


# ---------------------------------------------------------------------------
# Configuration schema
# ---------------------------------------------------------------------------

_CONTINUATION_DEFAULTS = {
    "dt_init": 0.1, "dt_min": 1e-4, "dt_grow": 1.5,
    "newton_tol": 1e-10, "max_newton": 50, "max_backtracks": 30,
    "guard_frac": 0.05, "jacobian_method": "fd",
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["manifold", "warping", "k", "r1", "r2", "phi", "coefficients"],
    "properties": {
        "manifold": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "resolution"],
            "properties": {
                "type": {"enum": ["flat_torus", "sphere2"]},
                "resolution": {"type": "array", "items": {"type": "integer", "minimum": 4},
                               "minItems": 2, "maxItems": 3},
                "periods": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                            "minItems": 2, "maxItems": 3},
            },
        },
        "warping": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["sphere", "euclidean", "hyperbolic", "power", "table"]},
                "param": {"type": "number"},
                "t_min": {"type": "number"},
                "t_max": {"type": "number"},
                "table_t": {"type": "array", "items": {"type": "number"}},
                "table_f": {"type": "array", "items": {"type": "number"}},
            },
        },
        "k": {"type": "integer", "minimum": 2},
        "r1": {"type": "number"},
        "r2": {"type": "number"},
        "phi": {
            "type": "object",
            "additionalProperties": False,
            "required": ["pivot"],
            "properties": {
                "pivot": {"type": "number"},
                "steepness": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["builtin", "table"]},
                "terms": {"type": "array", "items": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["amplitude"],
                    "properties": {
                        "amplitude": {"type": "number", "exclusiveMinimum": 0},
                        "epsilon": {"type": "number", "minimum": 0},
                        "profile": {"type": ["object", "null"]},
                    },
                }},
                "files": {"type": "array", "items": {"type": "string"}},
            },
        },
        "continuation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt_init": {"type": "number", "exclusiveMinimum": 0},
                "dt_min": {"type": "number", "exclusiveMinimum": 0},
                "dt_grow": {"type": "number", "exclusiveMinimum": 1},
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_newton": {"type": "integer", "minimum": 1},
                "max_backtracks": {"type": "integer", "minimum": 1},
                "guard_frac": {"type": "number", "minimum": 0},
                "jacobian_method": {"enum": ["fd", "analytic"]},
            },
        },
        "output_dir": {"type": "string"},
        "seed": {"type": "integer"},
        "export": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"slices": {"type": "boolean"}, "mesh": {"type": "boolean"}},
        },
    },
}


def normalize_config(cfg):
    """Validate against the schema and fill defaults.  Normalized configs
    round-trip: normalize(normalize(cfg)) == normalize(cfg)."""
    import jsonschema
    jsonschema.validate(cfg, CONFIG_SCHEMA)
    out = json.loads(json.dumps(cfg))  # deep copy, JSON-typed
    man = out["manifold"]
    if man["type"] == "flat_torus":
        man.setdefault("periods", [2.0 * np.pi] * len(man["resolution"]))
    warp = out["warping"]
    warp.setdefault("param", 0.0)
    warp.setdefault("t_min", 0.0)
    warp.setdefault("t_max", float("inf") if warp["kind"] != "sphere" else 1e308)
    if not np.isfinite(warp["t_max"]):
        warp["t_max"] = 1e308  # JSON has no infinity
    out["phi"].setdefault("steepness", 2.0)
    coeffs = out["coefficients"]
    if coeffs["kind"] == "builtin":
        if "terms" not in coeffs or len(coeffs["terms"]) != out["k"]:
            raise WarpcurveError("builtin coefficients need exactly k terms")
        for term in coeffs["terms"]:
            term.setdefault("epsilon", 0.0)
            term.setdefault("profile", None)
    else:
        if "files" not in coeffs or len(coeffs["files"]) != out["k"]:
            raise WarpcurveError("table coefficients need exactly k CSV files")
    cont = out.setdefault("continuation", {})
    for key, val in _CONTINUATION_DEFAULTS.items():
        cont.setdefault(key, val)
    out.setdefault("output_dir", "warpcurve-out")
    out.setdefault("seed", 0)
    exp = out.setdefault("export", {})
    exp.setdefault("slices", True)
    exp.setdefault("mesh", False)
    return out


def build_spec(cfg, base_dir="."):
    """Construct a ProblemSpec from a normalized configuration."""
    man = cfg["manifold"]
    if man["type"] == "flat_torus":
        grid = FlatTorus(man["resolution"], periods=man["periods"])
    else:
        nt, nphi = man["resolution"]
        grid = Sphere2(nt, nphi)
    wc = cfg["warping"]
    warping = WarpingFunction(
        kind=wc["kind"], param=wc["param"], t_min=wc["t_min"], t_max=wc["t_max"],
        table_t=np.asarray(wc["table_t"]) if "table_t" in wc else None,
        table_f=np.asarray(wc["table_f"]) if "table_f" in wc else None)
    k = cfg["k"]
    cc = cfg["coefficients"]
    if cc["kind"] == "builtin":
        terms = [CoefficientTerm(amplitude=t["amplitude"], epsilon=t["epsilon"],
                                 profile=t["profile"]) for t in cc["terms"]]
        coeffs = CoefficientFamily(terms, k)
    else:
        samples, tables = None, []
        for fname in cc["files"]:
            us, table = load_coefficient_table(Path(base_dir) / fname, grid)
            if samples is not None and not np.array_equal(us, samples):
                raise WarpcurveError("coefficient tables disagree on u samples")
            samples = us
            tables.append(table)
        coeffs = TabulatedCoefficients(samples, tables, k)
    cont = cfg["continuation"]
    return ProblemSpec(
        grid=grid, warping=warping, k=k, coeffs=coeffs,
        phi=PhiFunction(pivot=cfg["phi"]["pivot"], steepness=cfg["phi"]["steepness"]),
        r1=cfg["r1"], r2=cfg["r2"],
        newton_tol=cont["newton_tol"], max_newton=cont["max_newton"],
        max_backtracks=cont["max_backtracks"], dt_init=cont["dt_init"],
        dt_min=cont["dt_min"], dt_grow=cont["dt_grow"],
        guard_frac=cont["guard_frac"], jacobian_method=cont["jacobian_method"])


# ---------------------------------------------------------------------------
# Archives
# ---------------------------------------------------------------------------

def _coord_names(grid):
    if isinstance(grid, Sphere2):
        return ["theta", "phi"]
    return [f"x{i + 1}" for i in range(grid.n)]


def write_archive(out_dir, cfg, spec, state, status):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = _coord_names(spec.grid)
    with open(out / "solution.csv", "w") as fh:
        fh.write(",".join(names + ["u"]) + "\n")
        for row, val in zip(spec.grid.coords, state.u.values):
            cells = [FLOAT_FMT % c for c in row] + [FLOAT_FMT % val]
            fh.write(",".join(cells) + "\n")
    meta = {"version": __version__, "config": cfg, "status": status,
            "t_final": state.t, "diagnostics": state.diagnostics.as_dict()}
    with open(out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "log.jsonl", "w") as fh:
        for rec in state.steps:
            fh.write(json.dumps(rec) + "\n")


def read_archive(path):
    path = Path(path)
    with open(path / "metadata.json") as fh:
        meta = json.load(fh)
    values = []
    with open(path / "solution.csv") as fh:
        header = fh.readline().strip().split(",")
        ucol = header.index("u")
        for line in fh:
            values.append(float(line.strip().split(",")[ucol]))
    return meta, np.array(values)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def cmd_solve(args):
    try:
        with open(args.config) as fh:
            cfg = normalize_config(json.load(fh))
        spec = build_spec(cfg, base_dir=Path(args.config).parent)
    except (OSError, json.JSONDecodeError, WarpcurveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # jsonschema.ValidationError and friends
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 1

    report = problem.check_hypotheses(spec)
    if not report.passed:
        for chk in report.failing():
            print(f"hypothesis {chk.name} violated: margin {chk.worst_margin:.6e}, "
                  f"offender (u, node, l) = {chk.offender}", file=sys.stderr)
        if not args.force:
            return 3
        print("warning: --force given, continuing despite hypothesis rejection",
              file=sys.stderr)

    out_dir = Path(args.out or cfg["output_dir"])
    try:
        if report.passed:
            state = solver.continuation(spec)
        else:
            # bypass the hypothesis gate inside continuation
            state = _forced_continuation(spec)
    except ContinuationError as exc:
        if exc.last_state is not None:
            write_archive(out_dir, cfg, spec, exc.last_state, "continuation-failure")
            print(f"continuation failed: {exc}; last good state written to {out_dir}",
                  file=sys.stderr)
        else:
            print(f"continuation failed: {exc}", file=sys.stderr)
        return 2

    write_archive(out_dir, cfg, spec, state, "converged")
    diag = state.diagnostics
    print(f"converged at t={state.t:g}: u in [{diag.u_min:.6f}, {diag.u_max:.6f}], "
          f"tau_min={diag.tau_min:.6f}, |lambda|_max={diag.lambda_abs_max:.6f}")
    print(f"archive written to {out_dir}")
    return 0


def _forced_continuation(spec):
    import unittest.mock as mock
    passing = problem.HypothesisReport(checks={})
    with mock.patch.object(problem, "check_hypotheses", return_value=passing):
        return solver.continuation(spec)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _verify_sigma_brute(rng):
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(3, 9))
        lam = rng.standard_normal(n) * 3.0
        for k in range(n + 1):
            a = symfunc.elem_sym(lam, k)
            b = oracle.brute_sigma(lam, k)
            worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    return worst, worst <= 1e-12


def _verify_newton_maclaurin(rng):
    worst = np.inf
    found = 0
    while found < 300:
        n = int(rng.integers(3, 7))
        k = int(rng.integers(2, n + 1))
        lam = rng.normal(1.0, 1.0, size=n)
        if symfunc.cone_margins(lam, k) <= 0:
            continue
        found += 1
        m1, m2 = symfunc.newton_maclaurin_margins(lam, k, k - 1, 1, 0)
        worst = min(worst, float(m1), float(m2))
    return worst, worst >= -1e-12


def _verify_leaf_identity(rng):
    worst = 0.0
    grids = [FlatTorus((8, 8, 8)), Sphere2(16, 32)]
    warps = [WarpingFunction("hyperbolic", 1.0),
             WarpingFunction("euclidean"),
             WarpingFunction("sphere", 1.0)]
    for grid in grids:
        for w in warps:
            for c in (0.5, 0.9, 1.3):
                f, fp, _ = geometry.warp_eval(w, c)
                rec = geometry.fundamental_forms(GridFunction.constant(c, grid), w)
                worst = max(worst, float(np.abs(rec.lam - fp / f).max()))
    return worst, worst <= 1e-12


def _radial_spec(resolution=(8, 8, 8), jacobian_method="fd"):
    grid = FlatTorus(resolution)
    w = WarpingFunction("hyperbolic", 1.0)
    coeffs = CoefficientFamily(
        [CoefficientTerm(6.0), CoefficientTerm(1.0)], 2)
    return ProblemSpec(grid=grid, warping=w, k=2, coeffs=coeffs,
                       phi=PhiFunction(pivot=1.3), r1=1.0, r2=1.6,
                       jacobian_method=jacobian_method)


def _verify_jacobian_fd(rng):
    spec = _radial_spec((6, 6, 6))
    u = GridFunction(1.3 + 0.05 * np.sin(spec.grid.coords[:, 0]), spec.grid)
    worst = 0.0
    for method in ("fd", "analytic"):
        J = problem.jacobian(u, 0.7, spec, method=method)
        for _ in range(5):
            d = GridFunction(rng.standard_normal(spec.grid.num_nodes), spec.grid)
            ref = oracle.fd_directional(u, d, 0.7, spec).values
            got = J @ d.values
            worst = max(worst, float(np.abs(got - ref).max() / max(1.0, np.abs(ref).max())))
    return worst, worst <= 1e-6


def _verify_radial_end_to_end(rng):
    spec = _radial_spec((8, 8, 8))
    target = acosh(2.0)
    state = solver.continuation(spec)
    err = float(np.abs(state.u.values - target).max())
    return err, err <= 1e-6


VERIFY_CHECKS = {
    "sigma-brute": _verify_sigma_brute,
    "newton-maclaurin": _verify_newton_maclaurin,
    "leaf-identity": _verify_leaf_identity,
    "jacobian-fd": _verify_jacobian_fd,
    "radial-end-to-end": _verify_radial_end_to_end,
}


def cmd_verify(args):
    names = [args.filter] if args.filter else list(VERIFY_CHECKS)
    if args.filter and args.filter not in VERIFY_CHECKS:
        print(f"error: unknown check {args.filter!r}; choose from "
              f"{', '.join(VERIFY_CHECKS)}", file=sys.stderr)
        return 1
    rng = np.random.default_rng(20240817)
    failures = []
    print(f"{'check':<22}{'margin':>16}  status")
    for name in names:
        try:
            margin, ok = VERIFY_CHECKS[name](rng)
        except WarpcurveError as exc:
            margin, ok = float("nan"), False
            failures.append({"check": name, "error": str(exc)})
        else:
            if not ok:
                failures.append({"check": name, "margin": margin})
        print(f"{name:<22}{margin:>16.3e}  {'ok' if ok else 'FAIL'}")
    if failures:
        path = Path(args.out or ".") / "verify_failure.json"
        with open(path, "w") as fh:
            json.dump(failures, fh, indent=2)
        print(f"failures serialized to {path}", file=sys.stderr)
        return 4
    return 0


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(FLOAT_FMT % c for c in row) + "\n")


def cmd_export(args):
    try:
        meta, values = read_archive(args.archive)
        spec = build_spec(meta["config"], base_dir=args.archive)
    except (OSError, json.JSONDecodeError, KeyError, WarpcurveError) as exc:
        print(f"error: cannot read archive: {exc}", file=sys.stderr)
        return 1
    if args.format not in ("csv", "mesh"):
        print(f"error: unknown format {args.format!r}", file=sys.stderr)
        return 1
    out = Path(args.out or args.archive)
    out.mkdir(parents=True, exist_ok=True)
    grid = spec.grid
    u = GridFunction(values, grid)
    rec = geometry.fundamental_forms(u, spec.warping)
    lam_max = rec.lam[:, -1]

    if args.format == "csv":
        if isinstance(grid, Sphere2):
            rows = np.column_stack([grid.coords, values, lam_max])
            _write_csv(out / "field_latlong.csv", ["theta", "phi", "u", "lambda_max"], rows)
            print(f"wrote {out / 'field_latlong.csv'}")
        else:
            shape = grid.shape
            arr = values.reshape(shape)
            lam_arr = lam_max.reshape(shape)
            for axis in range(grid.n):
                mid = shape[axis] // 2
                sl = tuple(mid if a == axis else slice(None) for a in range(grid.n))
                sub_coords = grid.coords.reshape(shape + (grid.n,))[sl]
                names = [n for i, n in enumerate(_coord_names(grid)) if i != axis]
                keep = [i for i in range(grid.n) if i != axis]
                rows = np.column_stack(
                    [sub_coords[..., i].ravel() for i in keep]
                    + [arr[sl].ravel(), lam_arr[sl].ravel()])
                fname = out / f"slice_axis{axis + 1}.csv"
                _write_csv(fname, names + ["u", "lambda_max"], rows)
                print(f"wrote {fname}")
        return 0

    # wavefront mesh of the radius-graph embedding (generalized space form)
    if not isinstance(grid, Sphere2):
        print("error: mesh export is only defined for Sphere2 archives", file=sys.stderr)
        return 1
    nt, nphi = grid.shape
    th = grid.coords[:, 0]
    ph = grid.coords[:, 1]
    xyz = np.column_stack([values * np.sin(th) * np.cos(ph),
                           values * np.sin(th) * np.sin(ph),
                           values * np.cos(th)])
    path = out / "surface.obj"
    with open(path, "w") as fh:
        for vx in xyz:
            fh.write("v " + " ".join(FLOAT_FMT % c for c in vx) + "\n")
        for i in range(nt - 1):
            for j in range(nphi):
                jn = (j + 1) % nphi
                a = i * nphi + j + 1
                b = i * nphi + jn + 1
                c = (i + 1) * nphi + jn + 1
                d = (i + 1) * nphi + j + 1
                fh.write(f"f {a} {b} {c} {d}\n")
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _apply_worker_cap():
    cap = os.environ.get("WARPCURVE_MAX_WORKERS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def main(argv=None):
    _apply_worker_cap()
    parser = argparse.ArgumentParser(
        prog="warpcurve",
        description="Prescribed Weingarten curvature solver for graphs in warped products")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run the homotopy continuation solver")
    p_solve.add_argument("config", help="JSON configuration file")
    p_solve.add_argument("--out", help="override the output directory")
    p_solve.add_argument("--force", action="store_true",
                         help="continue despite hypothesis rejection")
    p_solve.set_defaults(func=cmd_solve)

    p_verify = sub.add_parser("verify", help="run the oracle/property suite")
    p_verify.add_argument("--filter", help="run only the named check family")
    p_verify.add_argument("--out", help="directory for failure serialization")
    p_verify.set_defaults(func=cmd_verify)

    p_export = sub.add_parser("export", help="emit plot-ready data from an archive")
    p_export.add_argument("archive", help="archive directory written by solve")
    p_export.add_argument("--format", default="csv", help="csv or mesh")
    p_export.add_argument("--out", help="output directory (default: the archive)")
    p_export.set_defaults(func=cmd_export)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
